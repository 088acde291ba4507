import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from liveseg.clickstate import Click
from liveseg.session import Engine
from liveseg.service import build_app


@pytest.fixture()
def engine(micro_bundle, tmp_path):
    eng = Engine(micro_bundle, cache_dir=str(tmp_path), zoom=False)
    rng = np.random.default_rng(5)
    for i in range(4):
        img = (rng.random((64, 64, 3)) * 255).astype(np.uint8)
        eng.encode_to_cache(f"img{i}", img)
    return eng


@pytest.fixture()
def client(engine):
    return TestClient(build_app(engine))


class TestHttpEndpoints:
    def test_health(self, client):
        r = client.get("/health")
        assert r.status_code == 200
        body = r.json()
        assert body["version"]
        assert body["config"]["dec.depths"] == "0,0,1,0"

    def test_open_click_close(self, client):
        r = client.post("/open", json={"image_id": "img0"})
        assert r.status_code == 200
        sid = r.json()["session_id"]
        assert r.json()["width"] == 64 and r.json()["height"] == 64
        r = client.post("/click", json={"session_id": sid, "x": 10, "y": 20,
                                        "positive": True})
        assert r.status_code == 200
        body = r.json()
        assert body["click_count"] == 1
        assert sum(body["mask_rle"]) == 64 * 64
        assert body["latency_ms"] > 0
        assert client.post("/close", json={"session_id": sid}).json() == {"ok": True}

    def test_open_unknown(self, client):
        assert client.post("/open", json={"image_id": "nope"}).status_code == 404

    def test_click_bad_session(self, client):
        r = client.post("/click", json={"session_id": "xyz", "x": 1, "y": 1,
                                        "positive": True})
        assert r.status_code == 404

    def test_click_out_of_bounds(self, client):
        sid = client.post("/open", json={"image_id": "img0"}).json()["session_id"]
        r = client.post("/click", json={"session_id": sid, "x": -1, "y": 5,
                                        "positive": True})
        assert r.status_code == 400

    def test_undo_flow(self, client):
        sid = client.post("/open", json={"image_id": "img0"}).json()["session_id"]
        client.post("/click", json={"session_id": sid, "x": 5, "y": 5, "positive": True})
        r = client.post("/undo", json={"session_id": sid})
        assert r.status_code == 200
        assert r.json()["click_count"] == 0
        assert client.post("/undo", json={"session_id": sid}).status_code == 400


class TestProtocolEquivalence:
    def test_http_matches_in_process(self, engine, client):
        clicks = [(10, 12, True), (40, 9, False), (22, 30, True)]
        sid = client.post("/open", json={"image_id": "img1"}).json()["session_id"]
        wire_payloads = []
        for x, y, pos in clicks:
            r = client.post("/click", json={"session_id": sid, "x": x, "y": y,
                                            "positive": pos})
            wire_payloads.append(r.json()["mask_rle"])
        s = engine.open_session("img1")
        for (x, y, pos), wire in zip(clicks, wire_payloads):
            result = engine.handle_click(s, Click(x, y, pos))
            assert json.dumps(result.mask_rle) == json.dumps(wire)

    def test_websocket_matches_http(self, engine, client):
        with client.websocket_connect("/ws") as ws:
            ws.send_json({"op": "open", "image_id": "img2"})
            opened = ws.receive_json()
            assert opened["op"] == "open" and opened["width"] == 64
            ws.send_json({"op": "click", "session_id": opened["session_id"],
                          "x": 7, "y": 9, "positive": True})
            ws_click = ws.receive_json()
            ws.send_json({"op": "health"})
            assert ws.receive_json()["version"]
            ws.send_json({"op": "close", "session_id": opened["session_id"]})
            assert ws.receive_json()["ok"]
        sid = client.post("/open", json={"image_id": "img2"}).json()["session_id"]
        http_click = client.post("/click", json={"session_id": sid, "x": 7, "y": 9,
                                                 "positive": True}).json()
        assert ws_click["mask_rle"] == http_click["mask_rle"]

    def test_websocket_error_keeps_channel(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.send_json({"op": "click", "session_id": "ghost", "x": 1, "y": 1,
                          "positive": True})
            assert "error" in ws.receive_json()
            ws.send_json({"op": "health"})
            assert ws.receive_json()["version"]


class TestConcurrency:
    def test_interleaved_sessions_equal_serial(self, engine):
        rng = np.random.default_rng(9)
        image_ids = [f"img{i}" for i in range(4)]
        per_session = [[(int(rng.integers(64)), int(rng.integers(64)),
                         bool(rng.random() < 0.5)) for _ in range(3)]
                       for _ in image_ids]

        serial = []
        for img, clicks in zip(image_ids, per_session):
            s = engine.open_session(img)
            last = None
            for x, y, pos in clicks:
                last = engine.handle_click(s, Click(x, y, pos))
            serial.append(last.mask_rle)

        client = TestClient(build_app(engine))
        sids = [client.post("/open", json={"image_id": img}).json()["session_id"]
                for img in image_ids]
        results = [None] * 4
        errors = []

        def worker(i):
            try:
                for x, y, pos in per_session[i]:
                    r = client.post("/click", json={"session_id": sids[i], "x": x,
                                                    "y": y, "positive": pos})
                    assert r.status_code == 200
                    results[i] = r.json()["mask_rle"]
            except Exception as e:  # noqa: BLE001
                errors.append(e)

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        assert results == serial
