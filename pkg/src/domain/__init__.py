"""Domain layer - pure business logic and entities"""
