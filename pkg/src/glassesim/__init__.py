"""glassesim: design and simulation toolkit for guide+detail multi-camera
imaging rigs, from optics trade studies to end-to-end reconstruction."""

__version__ = "0.1.0"
