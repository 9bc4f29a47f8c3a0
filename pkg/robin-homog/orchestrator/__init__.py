from .pipeline import PipelineOrchestrator

__all__ = ['PipelineOrchestrator']
