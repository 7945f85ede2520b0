"""cytoprobe: synthetic cell images, real-vs-fake Turing studies, and
gamified annotator-quality probes."""

__version__ = "0.1.0"
