"""Optional webhook that receives finished run summaries."""

import requests
import logging

from app.config import Config
from app.schemas import RunResultPayload, RunSummary

logger = logging.getLogger(__name__)


def send_run_result(summary: RunSummary, policies: list, url: str = "") -> bool:
    """
    POST a finished run to RESULTS_CALLBACK_URL.

    Args:
        summary: Finished run
        policies: Policies the run evaluated
        url: Override for Config.RESULTS_CALLBACK_URL

    Returns:
        True if the callback succeeded; False if it failed or no URL is set
    """
    url = url or Config.RESULTS_CALLBACK_URL
    if not url:
        logger.debug(f"No callback URL configured, run {summary.run_id} not posted")
        return False
    try:
        payload = RunResultPayload(
            runId=summary.run_id,
            profile=summary.profile,
            policies=list(policies),
            summary=summary.summary,
            elapsedSeconds=summary.elapsed_s,
        )
        response = requests.post(
            url,
            json=payload.model_dump(),
            headers={"Content-Type": "application/json"},
            timeout=5,
        )
        response.raise_for_status()
        logger.info(f"Result callback for run {summary.run_id} sent: {response.status_code}")
        return True
    except requests.exceptions.Timeout:
        logger.error(f"Callback timeout for run {summary.run_id}")
        return False
    except requests.exceptions.RequestException as e:
        logger.error(f"Callback failed for run {summary.run_id}: {e}")
        return False
    except Exception as e:
        logger.error(f"Unexpected error in callback for run {summary.run_id}: {e}")
        return False
