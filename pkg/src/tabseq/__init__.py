"""Sequence-to-sequence modelling of tables with structure-aware embeddings.

Submodules: ``tabledoc`` (documents and linearization), ``tokenizer``
(subword vocabulary), ``pretrain_data`` (denoising and entity-conditioned
pretraining examples), ``model``, ``trainer``, ``checkpoint``, ``sqlexec``,
``tasks`` (downstream adapters), ``metrics`` and ``cli``.
"""

__version__ = "0.1.0"
