"""Teacher-student adversarial depth hallucination toolkit.

Learns an RGB-to-depth generator from one paired RGB-D corpus plus one
unpaired RGB corpus, evaluates the hallucinated depth with image-quality
metrics, and feeds an RGB+depth fusion recognition harness.
"""

__version__ = "0.1.0"
