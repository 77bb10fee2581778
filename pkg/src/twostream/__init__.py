"""Two-stream video classification on synthetic shape-motion clips.

Subpackages:
    nn        from-scratch CNN layers, losses, SGD, gradient checking
    flow      variational optical flow and flow-stack assembly
    dataset   synthetic clip generator and on-disk formats
    streams   spatial/temporal stream networks and training
    fusion    early/mid/late fusion and the linear SVM
    evaluation, pipeline, cli
"""

__version__ = "0.1.0"
