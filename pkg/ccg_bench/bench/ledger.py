"""
Run ledger: grid-cell status and log lines, persisted to SQLite in batches
"""

import logging
import threading
import time
from pathlib import Path
from typing import Dict, List, Optional, Union

import aiosqlite

logger = logging.getLogger(__name__)


class RunLedger:
    """Batched aiosqlite persistence for one run directory"""

    def __init__(self, db_path: Union[str, Path], batch_size: int = 20,
                 flush_interval: float = 30.0):
        self.db_path = str(db_path)
        self.batch_logs: List[Dict] = []
        self.batch_size = batch_size
        self.flush_interval = flush_interval
        self.last_batch_time = time.monotonic()
        self._lock = threading.Lock()

        Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)

    async def initialize_database(self):
        """Create tables if they don't exist"""
        async with aiosqlite.connect(self.db_path) as db:
            await db.execute('''
                CREATE TABLE IF NOT EXISTS cells (
                    kind TEXT NOT NULL,
                    method TEXT NOT NULL,
                    dataset TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    status TEXT NOT NULL,
                    error TEXT,
                    updated_at DATETIME DEFAULT CURRENT_TIMESTAMP,
                    PRIMARY KEY (kind, method, dataset, seed)
                )
            ''')
            await db.execute('''
                CREATE TABLE IF NOT EXISTS logs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    message TEXT NOT NULL,
                    log_type TEXT DEFAULT 'info',
                    created_at DATETIME DEFAULT CURRENT_TIMESTAMP
                )
            ''')
            await db.commit()

    async def record_cell(self, kind: str, method: str, dataset: str, seed: int, status: str,
                          error: Optional[str] = None):
        """Upsert the outcome of one grid cell"""
        async with aiosqlite.connect(self.db_path) as db:
            await db.execute('''
                INSERT OR REPLACE INTO cells (kind, method, dataset, seed, status, error)
                VALUES (?, ?, ?, ?, ?, ?)
            ''', (kind, method, dataset, seed, status, error))
            await db.commit()

    async def cells(self, kind: Optional[str] = None) -> List[Dict]:
        query = "SELECT kind, method, dataset, seed, status, error FROM cells"
        args: tuple = ()
        if kind is not None:
            query += " WHERE kind = ?"
            args = (kind,)
        query += " ORDER BY kind, method, dataset, seed"
        async with aiosqlite.connect(self.db_path) as db:
            async with db.execute(query, args) as cursor:
                rows = await cursor.fetchall()
        keys = ("kind", "method", "dataset", "seed", "status", "error")
        return [dict(zip(keys, row)) for row in rows]

    def add_log(self, message: str, log_type: str = "info") -> Dict:
        """Queue a log line for the next batch; safe to call from worker threads"""
        entry = {"message": message, "log_type": log_type}
        with self._lock:
            self.batch_logs.append(entry)
        return entry

    async def maybe_flush(self):
        """Flush if the batch is full or enough time has passed"""
        elapsed = time.monotonic() - self.last_batch_time
        if len(self.batch_logs) >= self.batch_size or elapsed >= self.flush_interval:
            await self.flush()

    async def flush(self):
        """Write pending log lines to the database"""
        with self._lock:
            pending = list(self.batch_logs)
            self.batch_logs.clear()
        if not pending:
            return
        try:
            async with aiosqlite.connect(self.db_path) as db:
                await db.executemany('''
                    INSERT INTO logs (message, log_type) VALUES (?, ?)
                ''', [(e["message"], e["log_type"]) for e in pending])
                await db.commit()
            logger.debug(f"Saved {len(pending)} log lines to {self.db_path}")
            self.last_batch_time = time.monotonic()
        except Exception as e:
            logger.error(f"Error saving logs to ledger: {e}")
            with self._lock:
                self.batch_logs[:0] = pending


class RunLogger:
    """Logger facade that also mirrors every line into the run ledger"""

    def __init__(self, ledger: Optional[RunLedger] = None, name: str = "ccg_bench.run"):
        self.ledger = ledger
        self._logger = logging.getLogger(name)

    def info(self, message: str):
        self._logger.info(message)
        if self.ledger is not None:
            self.ledger.add_log(message)

    def warning(self, message: str):
        self._logger.warning(message)
        if self.ledger is not None:
            self.ledger.add_log(f"WARNING: {message}", "warning")

    def error(self, message: str):
        self._logger.error(message)
        if self.ledger is not None:
            self.ledger.add_log(f"ERROR: {message}", "error")
