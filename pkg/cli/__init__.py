# 命令行子命令模块
