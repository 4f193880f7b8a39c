"""
hierform - hierarchical windowed-attention models, cost analysis and training
"""
