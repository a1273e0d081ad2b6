import asyncio
import os

import pytest
from fastapi.testclient import TestClient
from unittest.mock import patch

from src.app.main_fastapi import (
    DB_ENV,
    OpenStream,
    _load_configured_database,
    app,
    get_database,
    streams,
)
from src.automata.dfa import compile_pattern_set
from src.engine.codec import FILE_SUFFIX, save_database
from src.engine.database import assemble
from src.engine.scanner import StreamState, scan_bytes, scan_stream
from src.errors import BadMagicError
from src.region.detector import detect


@pytest.fixture
def mode_db():
    """Hybrid database for the running example"""
    dfa = compile_pattern_set(["mode+l"])
    return assemble(dfa, detect(dfa))


@pytest.fixture
def client(mode_db):
    """Create a test client serving the example database"""
    app.dependency_overrides[get_database] = lambda: mode_db
    yield TestClient(app)
    app.dependency_overrides.clear()
    streams.clear()


@pytest.fixture
def bare_client():
    """Test client without a database override"""
    _load_configured_database.cache_clear()
    yield TestClient(app)
    _load_configured_database.cache_clear()


def test_app_metadata():
    """Test the application is configured"""
    assert app.title == "shufflescan"
    assert app.version == "0.3.0"


def test_health(client):
    """Test the health route reports the region"""
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "region": True}


def test_database_summary(client):
    """Test the database route summarizes the loaded tables"""
    data = client.get("/database").json()
    assert data["states"] == 6
    assert data["rows"] == 65
    assert data["region_size"] == 5
    assert data["s_limit"] == 4
    assert data["start"] == 0
    assert data["patterns"] == 1
    assert data["params"]["batch_length"] == 9
    assert len(data["digest"]) == 64


def test_region_dot(client):
    """Test the DOT export is served as Graphviz text"""
    response = client.get("/region.dot")
    assert response.status_code == 200
    assert response.headers["content-type"].startswith("text/vnd.graphviz")
    assert response.text.count('class="hyper"') == 5


@pytest.mark.parametrize("engine", ["hybrid", "scalar"])
def test_scan_upload(client, engine):
    """Test scanning an uploaded buffer"""
    response = client.post(
        "/scan",
        files={"file": ("input.bin", b"hmodel" * 3, "application/octet-stream")},
        data={"engine": engine},
    )
    assert response.status_code == 200
    assert response.json() == {
        "events": [{"pattern": 0, "offset": 6}, {"pattern": 0, "offset": 12}, {"pattern": 0, "offset": 18}],
        "bytes": 18,
    }


def test_scan_unknown_engine(client):
    """Test an unknown engine name is rejected"""
    response = client.post(
        "/scan",
        files={"file": ("input.bin", b"hmodel", "application/octet-stream")},
        data={"engine": "turbo"},
    )
    assert response.status_code == 422


def test_stream_lifecycle(client):
    """Test a match split over two chunks keeps its absolute offset"""
    stream_id = client.post("/streams").json()["stream_id"]
    first = client.post(f"/streams/{stream_id}", content=b"hmo")
    assert first.status_code == 200
    assert first.json()["events"] == []
    assert first.json()["consumed"] == 3
    second = client.post(f"/streams/{stream_id}?engine=scalar", content=b"del")
    assert second.json()["events"] == [{"pattern": 0, "offset": 6}]
    assert second.json()["consumed"] == 6
    closed = client.delete(f"/streams/{stream_id}")
    assert closed.json() == {"stream_id": stream_id, "closed": True}
    assert client.post(f"/streams/{stream_id}", content=b"x").status_code == 404


def test_unknown_stream(client):
    """Test unknown stream ids are 404"""
    assert client.post("/streams/nope", content=b"x").status_code == 404
    assert client.delete("/streams/nope").status_code == 404


def test_stream_state_mismatch(client):
    """Test a stream state foreign to the database is refused"""
    stream_id = client.post("/streams").json()["stream_id"]
    streams[stream_id] = OpenStream(state=StreamState(state=63))
    assert client.post(f"/streams/{stream_id}", content=b"x").status_code == 404


@patch("src.app.main_fastapi.MAX_STREAMS", 2)
def test_stream_table_is_capped(client):
    """Test opening more streams than the limit is refused until one closes"""
    first = client.post("/streams").json()["stream_id"]
    client.post("/streams")
    refused = client.post("/streams")
    assert refused.status_code == 429
    assert len(streams) == 2
    client.delete(f"/streams/{first}")
    assert client.post("/streams").status_code == 200


@patch("src.app.main_fastapi.MAX_STREAMS", 1)
def test_idle_streams_expire(client):
    """Test an idle stream is dropped to make room for a new one"""
    old = client.post("/streams").json()["stream_id"]
    with patch("src.app.main_fastapi.STREAM_IDLE_SECONDS", 0.0):
        new = client.post("/streams")
    assert new.status_code == 200
    assert old not in streams
    assert client.post(f"/streams/{old}", content=b"x").status_code == 404


def _record_thread(calls, real):
    def run(*args):
        try:
            asyncio.get_running_loop()
            calls.append("event loop")
        except RuntimeError:
            calls.append("worker thread")
        return real(*args)
    return run


def test_scans_run_off_the_event_loop(client):
    """Test buffer and stream scans execute in worker threads"""
    calls = []
    with patch("src.app.main_fastapi.scan_bytes", side_effect=_record_thread(calls, scan_bytes)), \
            patch("src.app.main_fastapi.scan_stream", side_effect=_record_thread(calls, scan_stream)):
        client.post("/scan", files={"file": ("input.bin", b"hmodel", "application/octet-stream")})
        stream_id = client.post("/streams").json()["stream_id"]
        response = client.post(f"/streams/{stream_id}", content=b"hmodel")
    assert response.json()["events"] == [{"pattern": 0, "offset": 6}]
    assert calls == ["worker thread", "worker thread"]


def test_no_database_configured(bare_client):
    """Test routes answer 503 when no database is configured"""
    with patch.dict(os.environ, {}, clear=True):
        assert bare_client.get("/health").status_code == 503


def test_database_loaded_from_environment(bare_client, tmp_path, mode_db):
    """Test the database named in the environment is loaded"""
    path = save_database(mode_db, tmp_path / f"mode{FILE_SUFFIX}")
    with patch.dict(os.environ, {DB_ENV: str(path)}):
        assert bare_client.get("/health").json() == {"status": "ok", "region": True}


@patch("src.app.main_fastapi.load_database")
def test_database_load_failure(mock_load, bare_client):
    """Test a database that fails to load answers 503"""
    mock_load.side_effect = BadMagicError("bad magic")
    with patch.dict(os.environ, {DB_ENV: "/tmp/broken.hfxd"}):
        response = bare_client.get("/database")
    assert response.status_code == 503
    assert "bad magic" in response.json()["detail"]
