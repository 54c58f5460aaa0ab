"""
Report Server Runner for CCG Bench
Serves emitted run artifacts read-only over HTTP
"""

import logging
import os

import uvicorn

from api.index import app

logging.basicConfig(
    level=os.getenv("CCG_BENCH_LOG_LEVEL", "INFO"),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

logger = logging.getLogger(__name__)

if __name__ == "__main__":
    logger.info("Starting CCG Bench report server")

    uvicorn.run(
        app,
        host="0.0.0.0",
        port=int(os.getenv("PORT", "8000")),
        log_level="info",
        access_log=True,
        workers=1,
        loop="asyncio"
    )
