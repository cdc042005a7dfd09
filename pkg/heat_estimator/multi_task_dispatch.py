from __future__ import annotations

import threading
from collections import deque
from enum import Enum, auto, unique
from typing import Any, Callable, Dict, List

from heat_estimator.log import logger


@unique
class TaskStatus(Enum):
    pending = auto()
    running = auto()
    done = auto()
    failed = auto()


class Task:
    def __init__(self, task_id: int, dependencies: List[int], extra_info: Any = None):
        self.task_id = task_id
        self.extra_info = extra_info
        self.dependencies = set(dependencies)
        self.status = TaskStatus.pending


class TaskManager:
    def __init__(self):
        """
        Holds tasks with dependencies and hands out the ready ones.

        Attributes:
        - task_dict (Dict[int, Task]): Unfinished tasks by id.
        - dependents (Dict[int, List[int]]): Tasks waiting on a given task.
        - ready (deque[int]): Ids whose dependencies are all done, in insertion order.
        - errors (Dict[int, BaseException]): Failures by task id.
        - task_lock (threading.Condition): Guards every attribute above.
        """
        self.task_dict: Dict[int, Task] = {}
        self.dependents: Dict[int, List[int]] = {}
        self.ready: deque[int] = deque()
        self.errors: Dict[int, BaseException] = {}
        self.task_lock = threading.Condition()
        self.now_id = 0

    @property
    def all_success(self) -> bool:
        return len(self.task_dict) == 0

    @property
    def stopped(self) -> bool:
        return self.all_success or bool(self.errors)

    def add_task(self, dependency_task_id: List[int], extra=None) -> int:
        """
        Adds a new task.

        Args:
            dependency_task_id (List[int]): Ids of unfinished tasks the new task waits for.
            extra (Any, optional): Payload passed to the handler.

        Returns:
            int: The id of the new task.
        """
        with self.task_lock:
            task_id = self.now_id
            pending = [d for d in dependency_task_id if d in self.task_dict]
            self.task_dict[task_id] = Task(task_id, pending, extra)
            for dependency in pending:
                self.dependents.setdefault(dependency, []).append(task_id)
            if not pending:
                self.ready.append(task_id)
            self.now_id += 1
            self.task_lock.notify()
            return task_id

    def get_next_task(self, process_id: int, timeout: float = 0.05):
        """
        Get the next ready task, waiting up to `timeout` seconds.

        Returns:
            tuple: (task, task_id), or (None, -1) when nothing is ready.
        """
        with self.task_lock:
            if not self.ready and not self.stopped:
                self.task_lock.wait(timeout=timeout)
            if not self.ready or self.errors:
                return None, -1
            task_id = self.ready.popleft()
            task = self.task_dict[task_id]
            task.status = TaskStatus.running
            logger.debug(
                f"[worker {process_id}] got task {task_id}, remaining {len(self.task_dict)}"
            )
            return task, task_id

    def mark_completed(self, task_id: int):
        """Remove a finished task and release the tasks waiting on it."""
        with self.task_lock:
            self.task_dict.pop(task_id).status = TaskStatus.done
            for dependent in self.dependents.pop(task_id, []):
                task = self.task_dict[dependent]
                task.dependencies.discard(task_id)
                if not task.dependencies:
                    self.ready.append(dependent)
            self.task_lock.notify_all()

    def mark_failed(self, task_id: int, error: BaseException):
        with self.task_lock:
            self.task_dict[task_id].status = TaskStatus.failed
            self.errors[task_id] = error
            self.task_lock.notify_all()


def worker(task_manager: TaskManager, process_id: int, handler: Callable):
    """
    Run ready tasks until every task is done or one has failed.

    Args:
        task_manager (TaskManager): Source of tasks.
        process_id (int): Worker id used in log messages.
        handler (Callable): Called with each task's `extra_info`.
    """
    while True:
        if task_manager.stopped:
            return
        task, task_id = task_manager.get_next_task(process_id)
        if task is None:
            continue
        try:
            handler(task.extra_info)
        except Exception as error:
            logger.debug("[worker {}] task {} failed: {}", process_id, task_id, error)
            task_manager.mark_failed(task_id, error)
            return
        task_manager.mark_completed(task_id)


def dispatch(task_manager: TaskManager, handler: Callable, max_thread_count: int) -> None:
    """Run all tasks on `max_thread_count` threads.

    Raises:
        Exception: The failure with the lowest task id among the tasks that ran.
    """
    if max_thread_count <= 1:
        worker(task_manager, 0, handler)
    else:
        threads = [
            threading.Thread(target=worker, args=(task_manager, process_id, handler))
            for process_id in range(max_thread_count)
        ]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
    if task_manager.errors:
        first = min(task_manager.errors)
        raise task_manager.errors[first]
