"""Two-stage person re-identification learner for intra-camera-supervised data.

Stage 1 trains an embedding against camera-specific non-parametric
classifiers backed by a centroid memory bank, plus a hybrid-mining
quintuplet loss.  Stage 2 links identities across cameras through a
thresholded mutual-1-NN graph and re-trains on the resulting pseudo labels.
"""

__version__ = "0.1.0"
