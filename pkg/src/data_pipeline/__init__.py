"""
Референсы, сбор прогонов и обучающие выборки.
"""
