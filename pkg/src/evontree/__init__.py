"""Ontology refinement toolkit: elicit candidate medical subclass/synonym
triples from a language model, confirm them with perplexity-based scoring,
derive reliable and extrapolated knowledge, locate knowledge gaps, and
synthesize a training corpus that targets those gaps."""

__version__ = "0.1.0"
