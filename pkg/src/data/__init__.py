"""Data layer - replay store and stage artifacts"""
