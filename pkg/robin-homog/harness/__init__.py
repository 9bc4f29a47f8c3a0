from .experiment import ExperimentConfig, HomogenizationHarness, EpsilonResult, HomogenizedResult

__all__ = ['ExperimentConfig', 'HomogenizationHarness', 'EpsilonResult', 'HomogenizedResult']
