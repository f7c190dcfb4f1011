# 配置模块：分析、模拟与理论网格的配置模型
