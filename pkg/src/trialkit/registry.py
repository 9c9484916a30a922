"""ClinicalTrials.gov API v2 client: paginated study pulls and hit counts."""

from __future__ import annotations

import json
import logging
import os
import time
from pathlib import Path
from typing import Any

import requests

from .gateway import RateLimiter
from .instruct import RegistryUnavailable
from .search import StructuredQuery

logger = logging.getLogger(__name__)

CTGOV_API = "https://clinicaltrials.gov/api/v2"

_PHASE_CODES = {"early phase 1": "EARLY_PHASE1", "phase 1": "PHASE1", "phase 2": "PHASE2",
                "phase 3": "PHASE3", "phase 4": "PHASE4", "not applicable": "NA"}


class FetchInterrupted(RegistryUnavailable):
    """A fetch stopped partway; ``checkpoint`` holds the resumable state."""

    def __init__(self, message: str, checkpoint: Path | None):
        super().__init__(message)
        self.checkpoint = checkpoint


def _area(field: str, terms: list[str]) -> str:
    return "(" + " OR ".join(f"AREA[{field}]{t}" for t in terms) + ")"


def studies_params(q: StructuredQuery) -> dict[str, str]:
    """Map a structured query onto ``/studies`` query parameters (OR within, AND across)."""
    params: dict[str, str] = {}
    if q.diseases:
        params["query.cond"] = " OR ".join(f'"{t}"' for t in q.diseases)
    if q.interventions:
        params["query.intr"] = " OR ".join(f'"{t}"' for t in q.interventions)
    if q.statuses:
        params["filter.overallStatus"] = ",".join(s.upper().replace(", ", "_").replace(" ", "_")
                                                   for s in q.statuses)
    advanced = []
    if q.phases:
        advanced.append(_area("Phase", [_PHASE_CODES.get(p, p.upper()) for p in q.phases]))
    if q.study_types:
        advanced.append(_area("StudyType", [t.upper().replace(" ", "_") for t in q.study_types]))
    if advanced:
        params["filter.advanced"] = " AND ".join(advanced)
    return params


class ClinicalTrialsGovClient:
    """Thin client over ``GET /studies`` with retries, rate limiting and checkpoints."""

    def __init__(self, base_url: str = CTGOV_API, session: requests.Session | None = None,
                 rate_limiter: RateLimiter | None = None, timeout: float = 30.0, page_size: int = 100,
                 max_retries: int = 3, backoff: float = 0.5, sleep=time.sleep):
        self.base_url = base_url.rstrip("/")
        self.session = session or requests.Session()
        self.rate_limiter = rate_limiter
        self.timeout = timeout
        self.page_size = page_size
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        self.requests_made = 0

    def _get(self, params: dict[str, Any]) -> dict:
        last = ""
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            if self.rate_limiter:
                self.rate_limiter.acquire()
            self.requests_made += 1
            try:
                resp = self.session.get(f"{self.base_url}/studies", params=params, timeout=self.timeout)
            except requests.RequestException as exc:
                last = f"connection error: {exc}"
                continue
            if resp.status_code == 200:
                return resp.json()
            last = f"HTTP {resp.status_code}"
            if resp.status_code != 429 and resp.status_code < 500:
                break
        raise RegistryUnavailable(f"registry request failed: {last}")

    def count(self, q: StructuredQuery) -> int:
        payload = self._get({**studies_params(q), "countTotal": "true", "pageSize": 1})
        if "totalCount" in payload:
            return int(payload["totalCount"])
        return len(payload.get("studies", []))

    def fetch(self, params: dict[str, str], checkpoint: str | Path | None = None,
              max_pages: int | None = None) -> list[dict]:
        """All study records matching ``params``, following ``nextPageToken``.

        With ``checkpoint`` set, progress is saved there when a page fails and
        a later call with the same params resumes from the saved page token.
        The checkpoint is removed after a complete pull.
        """
        ck = Path(checkpoint) if checkpoint else None
        studies: list[dict] = []
        token = None
        if ck and ck.exists():
            state = json.loads(ck.read_text(encoding="utf-8"))
            if state.get("params") == params:
                studies, token = state["studies"], state["next_page_token"]
                logger.info("resuming fetch at page token %s with %d studies", token, len(studies))
        pages = 0
        while True:
            query = {**params, "pageSize": self.page_size, "format": "json"}
            if token:
                query["pageToken"] = token
            try:
                payload = self._get(query)
            except RegistryUnavailable as exc:
                if ck:
                    tmp = ck.with_suffix(ck.suffix + ".tmp")
                    tmp.write_text(json.dumps({"params": params, "next_page_token": token, "studies": studies}),
                                   encoding="utf-8")
                    os.replace(tmp, ck)
                raise FetchInterrupted(f"{exc}; {len(studies)} studies saved", ck) from exc
            studies.extend(payload.get("studies", []))
            pages += 1
            token = payload.get("nextPageToken")
            if not token or (max_pages and pages >= max_pages):
                break
        if ck and ck.exists():
            ck.unlink()
        return studies
