"""forgetlab: forgetting dynamics of forward- vs reverse-KL post-training.

Two halves:

* ``forgetlab.mixture`` / ``forgetlab.dynamics`` -- univariate Gaussian-mixture
  policies trained toward a two-mode target with sample-based forward or
  reverse KL gradients, scored by overlap area with each target mode.
* ``forgetlab.lab`` -- a small discrete post-training harness (shared-parameter
  softmax policy, SFT variants, REINFORCE, GRPO) with exact evaluation.
"""

__version__ = "0.1.0"
