"""Adversarial robustness of neural networks under intrinsic hardware noise.

Subpackages: ``nn`` (8-bit sequential engine with input gradients), ``xbar``
(memristive crossbar mapping), plus ``attacks``, ``sram``, ``search`` and the
experiment harness (``run``, ``report``, ``cli``).
"""
__version__ = "0.1.0"
