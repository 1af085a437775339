import argparse  # 导入argparse库，用于预先解析 --config
import sys

from command_handler import CommandHandler  # 从command_handler模块导入CommandHandler类，处理命令行命令
from config import Config  # 从config模块导入Config类，用于配置管理
from logger import LOG  # 从logger模块导入LOG对象，用于日志记录


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)

    # 先取出 --config，使帮助信息中的默认值与实际配置一致
    pre_parser = argparse.ArgumentParser(add_help=False)
    pre_parser.add_argument('--config', default=None)
    known, _ = pre_parser.parse_known_args(argv)
    try:
        config = Config(known.config)  # 创建配置实例
    except ValueError:
        return 1

    command_handler = CommandHandler(config)  # 创建命令处理器实例
    try:
        return command_handler.execute(argv)
    except SystemExit as e:  # argparse 的用法错误（2）以及 --help（0）
        return e.code if isinstance(e.code, int) else 1
    except Exception as e:
        LOG.error(f"Unexpected error: {e}")  # 记录其他未预期的错误
        return 1


if __name__ == '__main__':
    sys.exit(main())  # 如果直接运行该文件，则执行main函数
