"""Load generator: N threads hammering GET /vhealth for a fixed time.

Usage: python rest_load.py PORT CLIENTS SECONDS; prints "ok bad".
Runs as a separate process so its threads do not share the server's GIL.
"""
import sys, threading, time, http.client
port, n, dur = int(sys.argv[1]), int(sys.argv[2]), float(sys.argv[3])
ok = [0]; bad = [0]; lock = threading.Lock()
start = threading.Barrier(n)
def worker():
    start.wait()
    end = time.monotonic() + dur
    while time.monotonic() < end:
        try:
            c = http.client.HTTPConnection("127.0.0.1", port, timeout=5)
            c.request("GET", "/vhealth"); body = c.getresponse().read().decode(); c.close()
            with lock:
                if len(body.split(",")) == 7: ok[0] += 1
                else: bad[0] += 1
        except Exception:
            with lock: bad[0] += 1
ts = [threading.Thread(target=worker) for _ in range(n)]
[t.start() for t in ts]; [t.join() for t in ts]
print(ok[0], bad[0])
