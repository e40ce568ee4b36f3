"""Descriptor matching and the homography / epipolar evaluation protocols."""
