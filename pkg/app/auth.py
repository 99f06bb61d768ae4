"""API key validation for the run service."""

import logging
import secrets
from typing import Optional

from fastapi import Header, HTTPException, status

from app.config import Config

logger = logging.getLogger(__name__)


async def validate_api_key(
    x_api_key: Optional[str] = Header(None, alias="x-api-key")
) -> str:
    """Check the x-api-key header against SIMULATOR_API_KEY; 401 when missing or wrong."""
    key = (x_api_key or "").strip()
    if not key:
        raise HTTPException(
            status_code=status.HTTP_401_UNAUTHORIZED,
            detail="Missing x-api-key header",
        )

    if not secrets.compare_digest(key.encode(), Config.API_KEY.encode()):
        logger.warning(f"Rejected API key {key[:4]}...")
        raise HTTPException(
            status_code=status.HTTP_401_UNAUTHORIZED,
            detail="Invalid API key",
        )

    logger.debug("Run service request authorized")
    return key
