"""
焦点-焦点奇点单值性数值工具包。
计算半环面可积哈密顿系统在焦点-焦点奇点附近的周期格、作用量正则化与单值性矩阵。
"""

__version__ = "0.1.0"
