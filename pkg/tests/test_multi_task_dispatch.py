import threading
import unittest

from heat_estimator.multi_task_dispatch import TaskManager, dispatch


class TestDispatch(unittest.TestCase):
    def build(self, n_groups=5, n_children=4):
        manager = TaskManager()
        for group in range(n_groups):
            root = manager.add_task([], ("setup", group))
            for child in range(n_children):
                manager.add_task([root], ("solve", group, child))
        return manager

    def test_dependencies_run_first(self):
        for threads in (1, 4):
            with self.subTest(threads=threads):
                manager = self.build()
                order = []
                lock = threading.Lock()

                def handler(extra):
                    with lock:
                        order.append(extra)

                dispatch(manager, handler, threads)
                self.assertTrue(manager.all_success)
                self.assertEqual(len(order), 25)
                for group in range(5):
                    setup = order.index(("setup", group))
                    for child in range(4):
                        self.assertLess(setup, order.index(("solve", group, child)))

    def test_single_thread_keeps_insertion_order(self):
        manager = TaskManager()
        first = manager.add_task([], "a")
        manager.add_task([first], "b")
        manager.add_task([], "c")
        order = []
        dispatch(manager, order.append, 1)
        self.assertEqual(order, ["a", "c", "b"])

    def test_finished_dependency_is_ignored(self):
        manager = TaskManager()
        first = manager.add_task([], "a")
        task, task_id = manager.get_next_task(0)
        self.assertEqual(task_id, first)
        manager.mark_completed(task_id)
        manager.add_task([first], "b")
        order = []
        dispatch(manager, order.append, 1)
        self.assertEqual(order, ["b"])

    def test_failure_is_raised(self):
        for threads in (1, 3):
            with self.subTest(threads=threads):
                manager = self.build(n_groups=3, n_children=2)

                def handler(extra):
                    if extra == ("setup", 1):
                        raise RuntimeError("singular patch")

                with self.assertRaisesRegex(RuntimeError, "singular patch"):
                    dispatch(manager, handler, threads)
                self.assertFalse(manager.all_success)
                self.assertIn(3, manager.errors)


if __name__ == "__main__":
    unittest.main()
