"""verde: a multi-tenant, OpenAI-compatible LLM gateway for course groups.

The package is organized around the deployable pieces:

* :mod:`verde.store` -- file-backed record store with CAS and append logs
* :mod:`verde.tenancy` -- courses, users, roles, surrogate API keys, login
* :mod:`verde.metering` -- token counting, reserve/settle budgets, usage ledger
* :mod:`verde.router` -- model-name routing and upstream forwarding
* :mod:`verde.rag` -- deterministic embeddings, cosine retrieval, prompt assembly
* :mod:`verde.intake` -- standalone document chunking/ingestion pipeline
* :mod:`verde.gateway` -- the HTTP service tying everything together
* :mod:`verde.cli` -- operator command line over the admin API
"""

__version__ = "0.1.0"
