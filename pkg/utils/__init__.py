# 工具模块：日志、文件读写与异常处理
