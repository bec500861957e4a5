import logging
import threading


class WarningCounter:
    """
    Running counter for a recurring numerical event.

    Each occurrence is logged as a warning together with the running total so
    that a long run shows how often the event happened without flooding the
    log: only the first ``verbose_limit`` occurrences and then every
    ``every``-th one are written.
    """

    def __init__(self, logger_name, event, verbose_limit=10, every=1000):
        self.logger = logging.getLogger(logger_name)
        self.event = event
        self.verbose_limit = verbose_limit
        self.every = every
        self.count = 0
        self._lock = threading.Lock()

    def hit(self, detail="", n=1):
        with self._lock:
            self.count += n
            count = self.count
        if count <= self.verbose_limit or count % self.every < n:
            self.logger.warning(f"{self.event} (total {count}){': ' + detail if detail else ''}")

    def reset(self):
        with self._lock:
            self.count = 0
