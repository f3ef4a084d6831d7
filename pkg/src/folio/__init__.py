"""folio: multimodal retrieval-augmented generation for text-heavy documents.

Subpackages: corpus (bundle ingestion), embed (providers), align (projection
and LoRA training), index (vector store), rag (retrieval + chat), evaluation
(benchmark harness), server (HTTP API), cli (command line).
"""

__version__ = "0.1.0"
