"""regkg - ontology-guided knowledge graphs from regulatory documents"""

__version__ = "0.1.0"
