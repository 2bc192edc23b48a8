"""Outlier-aware semi-supervised GAN classification of spectra with SOM membership features.

Modules, in pipeline order: ``core`` (datasets, CSV, standardization), ``som``
(Kohonen map, node covariances, D*), ``membership`` (sigmoid memberships),
``nn`` (layers and Adam), ``ssgan`` (generator, dual-path discriminator,
training), ``evaluation`` (ROC, reliability, confidence bands), ``synth``
(synthetic scenes), ``experiment`` and ``cli``.
"""

__version__ = "0.1.0"
