#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
SPDC 多光子干涉相关测量工具主程序
用法: python main.py {simulate,fit,gamma,spectrum,verify} --help
"""

import logging
import sys

from src.cli import run

if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    try:
        sys.exit(run())
    except KeyboardInterrupt:
        print("\n程序被用户中断。")
        sys.exit(130)
    except Exception as e:
        print(f"\n程序运行时出现未处理的异常: {e}")
        import traceback
        traceback.print_exc()
        sys.exit(1)
