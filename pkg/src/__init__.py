"""
PostRisk-SMC Source Package
"""

from .postrisk import EstimateReport, PostRiskConfig, run_postrisk, run_postrisk_once
from .problems import ForwardProblem, generate_truth
from .smc_posterior import run_smc_posterior
from .smc_rare import RareEventSpec, run_smc_rare

__all__ = ['EstimateReport', 'PostRiskConfig', 'run_postrisk', 'run_postrisk_once',
           'ForwardProblem', 'generate_truth', 'run_smc_posterior', 'RareEventSpec', 'run_smc_rare']
