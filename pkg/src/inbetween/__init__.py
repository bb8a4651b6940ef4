"""Real-time motion in-betweening: learned manifold + transition sampler.

Train on BVH clips, then generate the frames between a start pose and a
target pose at interactive rates.  See the README for the CLI and the
HTTP service.
"""

__version__ = "0.1.0"
