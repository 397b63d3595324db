"""
分析模块。
提供周期格基、作用量正则化与单值矩阵的计算。
"""
