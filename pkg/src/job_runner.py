import signal  # 导入signal库，用于信号处理
import sys
import threading
from concurrent.futures import ProcessPoolExecutor

from logger import LOG  # 导入日志记录器


def graceful_shutdown(signum, frame):
    # 收到终止信号时退出，进程池在 with 块结束时取消尚未开始的任务
    LOG.info("[优雅退出]接收到终止信号，停止剩余任务")
    sys.exit(1)  # 结果没有写完，以非零状态退出


def run_jobs(func, payloads, jobs=1):
    """
    执行一组相互独立的任务（交叉验证的折、消融实验的单元格），按 payloads 的顺序返回结果。

    :param func: 模块级函数（多进程时需要可被 pickle）。
    :param payloads: 每个任务的参数。
    :param jobs: 并行进程数，1 表示在当前进程内顺序执行。
    """
    payloads = list(payloads)
    if jobs < 1:
        raise ValueError(f"jobs 必须 ≥ 1，实际为 {jobs}")
    if jobs == 1 or len(payloads) <= 1:
        return [func(payload) for payload in payloads]

    workers = min(jobs, len(payloads))
    LOG.info(f"使用 {workers} 个进程执行 {len(payloads)} 个任务")
    # 只有主线程可以设置信号处理器
    install = threading.current_thread() is threading.main_thread()
    previous = signal.signal(signal.SIGTERM, graceful_shutdown) if install else None
    try:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(func, payloads))
    finally:
        if install:
            signal.signal(signal.SIGTERM, previous)
