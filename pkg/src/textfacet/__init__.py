"""textfacet: multi-faceted text classification.

A library and CLI that classifies short social-media posts by fusing three
views of the text: semantic representations built from several pretrained
word embeddings, a sentiment representation built from a task-trained frozen
embedding, and a topic-mixture representation from an LDA model. All neural
components run on a small self-contained reverse-mode autodiff core.
"""

__version__ = "0.1.0"
