"""
Exceptions raised while planning or assembling the model
"""


class PlanError(Exception):
    """Exception raised when a stage plan is inconsistent with its inputs"""
    pass
