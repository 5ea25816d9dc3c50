"""Setup configuration"""
# pip install -e .

from setuptools import setup, find_packages

setup(
    name="regkg",
    version="0.1.0",
    description="Ontology-guided knowledge graphs from regulatory document bundles",
    author="regkg maintainers",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    package_data={"src.services": ["templates/*.txt", "templates/*.json"]},
    python_requires=">=3.9",
    install_requires=[
        "sqlalchemy>=2.0.0",
        "pydantic>=2.0.0",
        "pandas>=2.0.0",
        "httpx>=0.25.0",
        "PyYAML>=6.0",
        "rdflib>=6.3.0",
    ],
    entry_points={
        "console_scripts": [
            "regkg=src.cli.main:main",
        ],
    },
)
