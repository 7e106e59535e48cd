"""dynguide: a desk-scale diffusion lab for studying mode-interpolation
hallucinations and mitigating them with per-step adaptive classifier guidance."""

__version__ = "0.1.0"
