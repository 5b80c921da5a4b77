"""
Shape space package: statistical shape models of surfaces and their fits to point clouds.
"""
from .logger import pipeline_logger

__all__ = ['pipeline_logger']
