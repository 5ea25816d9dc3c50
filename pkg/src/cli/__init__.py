"""Command-line entry layer"""
