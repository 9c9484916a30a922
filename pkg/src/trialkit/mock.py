"""Offline stand-ins for real models: a rule-based mock chat model and a local
HTTP stub server speaking the chat-completion and registry wire formats.

The mock recognises the bundled prompt templates by their wording. If you
override templates, the mock may stop recognising them; it then answers with a
generic reply.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterable, Mapping, Sequence
from urllib.parse import parse_qs, urlparse

from .gateway import ChatRequest
from .search import CATEGORIES, PHASES, STATUSES, STUDY_TYPES, canonical_term
from .text import jaccard, tokenize


def _digest(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def _between(text: str, start: str, end: str | None = None) -> str:
    i = text.find(start)
    if i < 0:
        return ""
    i += len(start)
    j = text.find(end, i) if end else -1
    return text[i:j if j >= 0 else None].strip()


def _overlap(a: str, b: str) -> float:
    return jaccard(set(tokenize(a)), set(tokenize(b)))


class MockBackend:
    """Deterministic rule-based chat model for offline pipelines.

    ``lexicon`` maps ``"diseases"``/``"interventions"`` to known surface terms
    used for extraction; ``related`` maps a normalized term to related terms
    for expansion. ``sentinel``, when set, is prefixed to every answer so tests
    can trace model-generated text through prompts.
    """

    def __init__(self, lexicon: Mapping[str, Sequence[str]] | None = None,
                 related: Mapping[str, Sequence[str]] | None = None,
                 model_id: str = "mock", sentinel: str | None = None):
        self.model_id = model_id
        self.sentinel = sentinel
        self.lexicon = {k: sorted(set(v), key=lambda t: (-len(t), t)) for k, v in (lexicon or {}).items()}
        self.related = {k.lower(): list(v) for k, v in (related or {}).items()}
        self.calls = 0
        self._lock = threading.Lock()

    def send(self, req: ChatRequest) -> str:
        with self._lock:
            self.calls += 1
        text = self.respond(req.messages)
        return f"{self.sentinel} {text}" if self.sentinel else text

    # routing ---------------------------------------------------------------
    def respond(self, messages: Sequence[Mapping[str, str]]) -> str:
        first_user = next((m["content"] for m in messages if m["role"] == "user"), "")
        last_user = [m["content"] for m in messages if m["role"] == "user"][-1]
        if "Partially filled JSON so far" in first_user:
            m = re.search(r'Reply again for "(\w+)"', last_user) or re.search(r'Fill the key "(\w+)"', first_user)
            return self.fill_key(m.group(1) if m else "", first_user)
        if "suggest additional related MeSH-style terms" in first_user:
            return self.expand(first_user)
        if "You create training data for clinical trial search" in first_user:
            return self.generate_queries(first_user)
        if "explain why it was designed that way" in first_user:
            return self.design_reasons(first_user)
        if "You are writing a realistic multi-turn conversation" in first_user:
            return self.design_conversation(first_user)
        if "Summarize the clinical trial below" in first_user:
            return self.summarize(_between(first_user, "design.\n"))
        if "review-style conclusion" in first_user:
            return self.summarize(first_user.split("\n\n", 1)[-1], review=True)
        if "clinical trial recruitment" in first_user and first_user.rstrip().endswith("Trial-level eligibility:"):
            return self.match(first_user)
        if "Answer \"Yes\" or \"No\"" in first_user:
            return self.judge_goal(first_user)
        if "classify the conclusion it reaches" in first_user:
            return self.judge_conclusion(first_user)
        if "output 1; otherwise output 0" in first_user:
            return self.judge_relevance(first_user)
        return self.design_turn(messages)

    # behaviours ------------------------------------------------------------
    def _find_terms(self, text: str, category: str) -> list[str]:
        low = text.lower()
        if category in ("diseases", "interventions"):
            found = []
            for term in self.lexicon.get(category, []):
                if re.search(r"(?<![a-z0-9])" + re.escape(term.lower()) + r"(?![a-z0-9])", low):
                    if not any(term.lower() in f.lower() for f in found):
                        found.append(term)
            return found
        if category == "phases":
            hits = re.findall(r"\b(early phase (?:1|i)|phase (?:[1-4]|iv|iii|ii|i))\b", low)
            return list(dict.fromkeys(canonical_term(h, "phases") for h in hits))
        vocab = STATUSES if category == "statuses" else STUDY_TYPES
        taken: list[tuple[int, int]] = []
        found = []
        for v in sorted(vocab, key=lambda t: (-len(t), t)):
            for m in re.finditer(r"(?<![a-z])" + re.escape(v) + r"(?![a-z])", low):
                if any(m.start() < e and s < m.end() for s, e in taken):
                    continue
                taken.append(m.span())
                if v not in found:
                    found.append(v)
        return found

    def fill_key(self, key: str, prompt: str) -> str:
        request = _between(prompt, "Request:", "Partially filled JSON so far")
        terms = self._find_terms(request, key) if key in CATEGORIES else []
        style = _digest(prompt) % 3
        payload = json.dumps(terms)
        if style == 0:
            return payload
        if style == 1:
            return f"Here are the {key} I found:\n```json\n{payload}\n```"
        return f"Sure. {key}: {payload} (based on the request)"

    def expand(self, prompt: str) -> str:
        given = json.loads(_between(prompt, "Given terms:", "\n") or "[]")
        out: list[str] = []
        for term in given:
            for rel in self.related.get(term.lower(), []):
                if rel.lower() not in {g.lower() for g in given} and rel not in out:
                    out.append(rel)
        return json.dumps(out[:6])

    def generate_queries(self, prompt: str) -> str:
        n = int(re.search(r"Write (\d+) new examples", prompt).group(1))
        rng = random.Random(_digest(prompt))
        diseases = self.lexicon.get("diseases") or ["asthma"]
        drugs = self.lexicon.get("interventions") or ["placebo"]
        out = []
        for _ in range(n):
            d, i = rng.choice(diseases), rng.choice(drugs)
            phase = rng.choice(PHASES[1:])
            status = rng.choice(("recruiting", "completed", "active, not recruiting"))
            style = rng.randrange(3)
            if style == 0:
                request = f"Find {phase} trials of {i} for {d} that are {status}."
                q = {"diseases": [d], "interventions": [i], "phases": [phase], "statuses": [status]}
            elif style == 1:
                request = f"I am looking for interventional studies testing {i} in patients with {d}."
                q = {"diseases": [d], "interventions": [i], "study_types": ["interventional"]}
            else:
                request = f"Which {status} studies enroll people with {d}?"
                q = {"diseases": [d], "statuses": [status]}
            out.append({"request": request, "query": q})
        return "Here are the new examples:\n" + json.dumps(out, indent=1)

    def design_reasons(self, prompt: str) -> str:
        items = re.findall(r"^\d+\. (.+)$", prompt.split("one reason per item.", 1)[-1], re.M)
        lines = []
        for i, item in enumerate(items, 1):
            words = " ".join(tokenize(item)[:8])
            lines.append(f"{i}. This item ({words}) keeps the population appropriate and the results interpretable.")
        return "\n".join(lines)

    def design_conversation(self, prompt: str) -> str:
        name = _between(prompt, "design the ", " of a clinical trial")
        title = _between(prompt, "Title:", "\n")
        block = prompt.split("with the reasons behind each:", 1)[-1]
        items = re.findall(r"^\d+\. (.+)$", block, re.M)
        msgs = [
            ("user", f"I am planning a trial titled \"{title}\". Can you help me design the {name}?"),
            ("assistant", "Of course. What is the main objective of the study?"),
            ("user", "We want to evaluate efficacy and safety in the target population."),
            ("assistant", "Understood. Who is the target population and what are the key endpoints?"),
            ("user", "Adults with the condition; the key endpoints follow the trial setup."),
            ("assistant", f"Thanks. Let's go through the {name} one at a time."),
        ]
        for item in items:
            msgs.append(("user", "What would you suggest next?"))
            msgs.append(("assistant", f"I suggest: {item}"))
        msgs.append(("user", f"Please summarize the full list of {name}."))
        msgs.append(("assistant", "Final design:\n" + "\n".join(f"- {item}" for item in items)))
        return json.dumps([{"role": r, "content": c} for r, c in msgs], ensure_ascii=False)

    def summarize(self, text: str, review: bool = False) -> str:
        body = " ".join(line for line in text.splitlines() if line and not line.startswith("#")
                        and not line.startswith("Title:"))
        body = re.sub(r"^Abstract: ", "", body)
        sentences = re.split(r"(?<=[.!?])\s+", body.replace("Abstract: ", ""))
        summary = " ".join(sentences[:3 if review else 2]).strip()
        return summary or "No summary available."

    def match(self, prompt: str) -> str:
        labels = dict(re.findall(r"^([0-2])\) ([^(\n]+)", prompt.split("Here is an example:", 1)[0], re.M))
        case = prompt.split("Patient notes:")[-1]
        note = _between(case, "", "Trial criteria:")
        criteria = _between(case, "Trial criteria:", "Trial-level eligibility:")
        inclusion, _, exclusion = criteria.partition("Exclusion Criteria")
        inc, exc = _overlap(note, inclusion), _overlap(note, exclusion)
        if exc > inc and exc > 0.08:
            label = "0"
        elif inc >= 0.12:
            label = "2"
        else:
            label = "1"
        reasoning = (f"The patient note shares {inc:.2f} of its vocabulary with the inclusion criteria "
                     f"and {exc:.2f} with the exclusion criteria.")
        name = labels.get(label, label).strip()
        return f"{reasoning}\nTrial-level eligibility: {label}) {name}"

    def judge_goal(self, prompt: str) -> str:
        gold = _between(prompt, "Reference", "Generated")
        gen = _between(prompt, "Generated", "Do the two")
        return "Yes" if _overlap(gold, gen) >= 0.2 else "No"

    def judge_conclusion(self, prompt: str) -> str:
        s = _between(prompt, "Summary:", "Choose exactly one label").lower()
        if re.search(r"no significant|did not differ|no difference", s):
            return "no significant difference"
        if re.search(r"worse|harm|increased risk|adverse effect", s):
            return "negative effect"
        if re.search(r"improv|reduc|effective|benefit|superior", s):
            return "positive effect"
        return "inconclusive"

    def judge_relevance(self, prompt: str) -> str:
        gold = _between(prompt, "Reference:", "Generated:")
        gen = _between(prompt, "Generated:", "If the generated")
        return "1" if _overlap(gold, gen) >= 0.15 else "0"

    def design_turn(self, messages: Sequence[Mapping[str, str]]) -> str:
        last = [m["content"] for m in messages if m["role"] == "user"][-1]
        context = " ".join(m["content"] for m in messages if m["role"] == "system")
        words = tokenize(context)[-12:] + tokenize(last)[:12]
        return "I suggest: " + " ".join(words) if words else "I suggest continuing with the design."


# -- local HTTP stub --------------------------------------------------------------

Route = Callable[[str, dict, dict | None], tuple[int, dict]]


class StubServer:
    """Threaded local HTTP server for tests and offline demos.

    ``routes`` maps a path prefix to ``handler(path, query, json_body) ->
    (status, json_payload)``. ``fail_first`` is a list of HTTP statuses served
    (in order) before any handler runs. Every request is logged with its
    monotonic arrival time.
    """

    def __init__(self, routes: Mapping[str, Route], fail_first: Iterable[int] = ()):
        import time

        self.routes = dict(routes)
        self.fail_first = list(fail_first)
        self.log: list[tuple[float, str]] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def _serve(self, body):
                with stub._lock:
                    stub.log.append((time.monotonic(), self.path))
                    fail = stub.fail_first.pop(0) if stub.fail_first else None
                if fail is not None:
                    return self._send(fail, {"error": {"message": f"injected {fail}"}})
                url = urlparse(self.path)
                query = {k: v[-1] for k, v in parse_qs(url.query).items()}
                for prefix, handler in stub.routes.items():
                    if url.path.startswith(prefix):
                        return self._send(*handler(url.path, query, body))
                return self._send(404, {"error": {"message": "not found"}})

            def _send(self, status, payload):
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                self._serve(None)

            def do_POST(self):
                n = int(self.headers.get("Content-Length", 0))
                self._serve(json.loads(self.rfile.read(n) or b"{}"))

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def request_count(self) -> int:
        return len(self.log)

    def __enter__(self) -> StubServer:
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()


def chat_route(model: MockBackend) -> Route:
    """Serve ``/chat/completions`` from a mock model."""

    def handle(path, query, body):
        text = model.respond(body["messages"])
        if model.sentinel:
            text = f"{model.sentinel} {text}"
        return 200, {"id": "stub", "object": "chat.completion", "model": body.get("model"),
                     "choices": [{"index": 0, "message": {"role": "assistant", "content": text},
                                  "finish_reason": "stop"}]}

    return handle


def studies_route(pages: Sequence[Sequence[dict]]) -> Route:
    """Serve ClinicalTrials.gov v2 ``/studies`` pages linked by ``pageToken``."""

    def handle(path, query, body):
        i = int(query.get("pageToken", "0"))
        payload: dict = {"studies": list(pages[i])}
        if i + 1 < len(pages):
            payload["nextPageToken"] = str(i + 1)
        return 200, payload

    return handle
