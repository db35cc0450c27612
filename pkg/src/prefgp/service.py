"""Session API for live runs.

A thin adapter over the run loop: create a run, poll its state, fetch and
answer queries while it evolves, then fetch the front and take the blinded
final survey. All state changes go through the session's event log, so every
endpoint effect is reconstructible.

Clients poll; there is no server push. Error bodies carry machine-readable
codes: invalid_config, not_found, conflict, gone, no_query.
"""

from __future__ import annotations

import os
import threading
import uuid
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .datasets import DataError, build_survey_pairs, load_dataset, load_front_pool
from .loop import (
    ActiveRun,
    DuplicateFeedbackError,
    NoQueryAvailable,
    RunConfig,
    RunError,
    UnknownQueryError,
)
from .simulate import OracleUser
from .estimator import SIZE_INDEX, DEFAULT_PHI

SURVEY_TAUS = (30, 50)


@dataclass
class ServiceConfig:
    """datasets: name -> (csv path, task). pools: competitor kind ("phi" /
    "size") -> directory of precomputed run directories."""

    datasets: Mapping[str, tuple[str, str]]
    pools: Mapping[str, str] = field(default_factory=dict)
    default_pop_size: int = 256
    default_generations: int = 50


class CreateRunRequest(BaseModel):
    dataset: str
    estimator: str = "learned"
    seed: int = 0
    pop_size: int | None = None
    generations: int | None = None
    oracle: str | None = None  # "size" | "phi": scripted user, for demos/tests
    oracle_noise_p: float = 0.0


class FeedbackRequest(BaseModel):
    query_id: int
    choice: str


class SurveyAnswerRequest(BaseModel):
    pair_id: int
    choice: str


def assemble_survey(front, pools, rng: np.random.Generator,
                    taus=SURVEY_TAUS) -> list[dict]:
    """Build the blinded survey: match front entries against the pools and
    randomize which side the learned model lands on, keeping provenance
    server-side only."""
    pairs = build_survey_pairs(front, pools, taus=taus)
    out = []
    for i, pair in enumerate(pairs):
        out.append({
            "pair_id": i,
            "learned_side": "left" if rng.random() < 0.5 else "right",
            "kind": pair.kind,
            "tau": pair.tau,
            "learned": pair.learned.expression,
            "competitor": pair.competitor.expression,
        })
    return out


class Session:
    def __init__(self, run: ActiveRun, thread: threading.Thread, seed: int):
        self.run = run
        self.thread = thread
        self.survey_rng = np.random.default_rng([seed, 0x5EED])
        self.survey_pairs: list[dict] | None = None
        self.survey_answered: set[int] = set()
        self.closed = False
        self.lock = threading.Lock()

    @property
    def state(self) -> str:
        if self.closed:
            return "closed"
        if self.run.state == "finished" and self.survey_pairs is not None:
            return "surveying"
        return self.run.state


def _error(status: int, code: str, **extra):
    return JSONResponse(status_code=status, content={"code": code, **extra})


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="prefgp session service")
    sessions: dict[str, Session] = {}
    pools = {kind: load_front_pool(path) for kind, path in config.pools.items()}
    app.state.sessions = sessions

    def get_session(run_id: str) -> Session | None:
        return sessions.get(run_id)

    @app.post("/runs")
    def create_run(req: CreateRunRequest):
        errors = {}
        if req.dataset not in config.datasets:
            errors["dataset"] = f"unknown dataset {req.dataset!r}"
        if req.estimator not in ("learned", "phi", "size"):
            errors["estimator"] = f"unknown estimator {req.estimator!r}"
        if req.oracle not in (None, "size", "phi"):
            errors["oracle"] = f"unknown oracle {req.oracle!r}"
        if errors:
            return _error(400, "invalid_config", errors=errors)

        path, task = config.datasets[req.dataset]
        try:
            dataset = load_dataset(path, task, req.seed)
            run_config = RunConfig(
                task=task, estimator=req.estimator, seed=req.seed,
                pop_size=req.pop_size or config.default_pop_size,
                generations=req.generations or config.default_generations)
            run = ActiveRun(dataset, run_config)
        except (DataError, RunError) as exc:
            return _error(400, "invalid_config", errors={"config": str(exc)})

        user = None
        if req.oracle == "size":
            user = OracleUser(SIZE_INDEX, req.oracle_noise_p)
        elif req.oracle == "phi":
            user = OracleUser(DEFAULT_PHI, req.oracle_noise_p)
        thread = threading.Thread(target=run.run_headless, kwargs={"user": user},
                                  daemon=True)
        run_id = uuid.uuid4().hex
        sessions[run_id] = Session(run, thread, req.seed)
        thread.start()
        return {"id": run_id, "state": "warming_up"}

    @app.get("/runs/{run_id}")
    def get_state(run_id: str):
        session = get_session(run_id)
        if session is None:
            return _error(404, "not_found")
        run = session.run
        return {
            "id": run_id,
            "state": session.state,
            "generation": run.generation,
            "generations": run.config.generations,
            "progress": run.progress,
            "cumulative_feedback": run.telemetry.cumulative_feedback(),
        }

    @app.get("/runs/{run_id}/query")
    def get_query(run_id: str):
        session = get_session(run_id)
        if session is None:
            return _error(404, "not_found")
        state = session.state
        if state == "closed":
            return _error(410, "gone")
        if state in ("finished", "surveying"):
            return _error(410, "gone", redirect="survey")
        if state == "warming_up":
            return {"code": "no_query"}
        try:
            query = session.run.next_query()
        except NoQueryAvailable:
            return {"code": "no_query"}
        return {
            "id": query.id,
            "left": {"expression": query.left.expression},
            "right": {"expression": query.right.expression},
            "issued_at": query.issued_at,
        }

    @app.post("/runs/{run_id}/feedback")
    def post_feedback(run_id: str, req: FeedbackRequest):
        session = get_session(run_id)
        if session is None:
            return _error(404, "not_found")
        if session.state in ("finished", "surveying", "closed"):
            return _error(410, "gone")
        if req.choice not in ("left", "right"):
            return _error(400, "invalid_config",
                          errors={"choice": f"must be left or right, got {req.choice!r}"})
        try:
            ack = session.run.submit_feedback(req.query_id, req.choice)
        except UnknownQueryError:
            return _error(404, "not_found")
        except DuplicateFeedbackError:
            return _error(409, "conflict")
        return {"ok": True, "query_id": ack["query_id"]}

    @app.get("/runs/{run_id}/front")
    def get_front(run_id: str):
        session = get_session(run_id)
        if session is None:
            return _error(404, "not_found")
        if session.run.state != "finished":
            return _error(409, "conflict")
        return {"entries": [{
            "expression": e.expression,
            "mse_train": e.mse_train,
            "err_train": e.err_train,
            "err_test": e.err_test,
            "psi_hat": e.psi_hat,
            "features": list(e.features),
            "generation": e.generation,
        } for e in session.run.front]}

    @app.get("/runs/{run_id}/survey")
    def get_survey(run_id: str):
        session = get_session(run_id)
        if session is None:
            return _error(404, "not_found")
        if session.state == "closed":
            return _error(410, "gone")
        if session.state not in ("finished", "surveying"):
            return _error(409, "conflict")
        with session.lock:
            if session.survey_pairs is None:
                if not pools:
                    return _error(409, "conflict",
                                  errors={"pools": "no precomputed fronts configured"})
                try:
                    # competitor kind and placement stay server-side (blinding)
                    session.survey_pairs = assemble_survey(
                        session.run.front, pools, session.survey_rng)
                except DataError as exc:
                    return _error(409, "conflict", errors={"pools": str(exc)})
                session.run.events.append({
                    "event": "survey_built",
                    "pairs": [{k: p[k] for k in
                               ("pair_id", "learned_side", "kind", "tau")}
                              for p in session.survey_pairs],
                })
        visible = []
        for p in session.survey_pairs:
            left = p["learned"] if p["learned_side"] == "left" else p["competitor"]
            right = p["competitor"] if p["learned_side"] == "left" else p["learned"]
            visible.append({
                "pair_id": p["pair_id"],
                "left": {"expression": left},
                "right": {"expression": right},
                "answered": p["pair_id"] in session.survey_answered,
            })
        return {"pairs": visible}

    @app.post("/runs/{run_id}/survey/answer")
    def post_survey_answer(run_id: str, req: SurveyAnswerRequest):
        session = get_session(run_id)
        if session is None:
            return _error(404, "not_found")
        if session.state == "closed":
            return _error(410, "gone")
        if session.state != "surveying":
            return _error(409, "conflict")
        if req.choice not in ("left", "right"):
            return _error(400, "invalid_config",
                          errors={"choice": f"must be left or right, got {req.choice!r}"})
        with session.lock:
            by_id = {p["pair_id"]: p for p in session.survey_pairs}
            if req.pair_id not in by_id:
                return _error(404, "not_found")
            if req.pair_id in session.survey_answered:
                return _error(409, "conflict")
            session.survey_answered.add(req.pair_id)
            pair = by_id[req.pair_id]
            chose_learned = req.choice == pair["learned_side"]
            session.run.events.append({
                "event": "survey_answer", "pair_id": req.pair_id,
                "choice": req.choice, "kind": pair["kind"], "tau": pair["tau"],
                "chose_learned": chose_learned,
            })
            done = len(session.survey_answered) == len(session.survey_pairs)
            if done:
                session.closed = True
                session.run.events.append({"event": "closed"})
        return {"ok": True, "completed": done}

    return app


def load_service_config(path) -> ServiceConfig:
    import json

    with open(path) as fh:
        raw = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    datasets = {name: (resolve(spec["path"]), spec["task"])
                for name, spec in raw["datasets"].items()}
    pools = {kind: resolve(path) for kind, path in raw.get("pools", {}).items()}
    return ServiceConfig(datasets=datasets, pools=pools,
                         default_pop_size=raw.get("pop_size", 256),
                         default_generations=raw.get("generations", 50))
