"""One-time oracle run: freeze a reference SSIM value for the pinned test.

Uses scikit-image's structural_similarity in the Wang et al. configuration
(gaussian_weights=True, sigma=1.5, use_sample_covariance=False) on a fixed
seeded image pair.  The resulting number is hard-coded in
tests/test_metrics.py; re-run this script only to regenerate it.
"""

import numpy as np
import skimage
from skimage.metrics import structural_similarity

rng = np.random.default_rng(1234)
a = rng.random((32, 32, 3))
b = np.clip(a + 0.2 * rng.normal(size=a.shape), 0.0, 1.0)
ref = structural_similarity(a, b, channel_axis=2, gaussian_weights=True,
                            sigma=1.5, use_sample_covariance=False,
                            data_range=1.0)
print(f"scikit-image {skimage.__version__}: ssim = {ref:.10f}")
