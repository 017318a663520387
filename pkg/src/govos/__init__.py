"""Video object segmentation by power iteration on a spacetime flow-chain graph."""
