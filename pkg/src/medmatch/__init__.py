"""Match PubMed PMIDs to Web of Science accession numbers (UTs)."""

__version__ = "0.1.0"
