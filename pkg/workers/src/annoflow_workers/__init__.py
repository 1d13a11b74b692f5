"""Reference workers for annotation pipelines.

Each module is an executable script that talks to its host over
newline-delimited JSON on stdio and does one job: queueing annotation
items, grouping boxes for clustered review, attaching detector proposals
from a sidecar file, or breaking a pipeline loop.
"""
