"""Quick end-to-end check of the oaas_mini extension module."""

import oaas_mini

MANIFEST = """
classes:
  - name: Counter
    qos:
      availability: 99.9
      locality: Local
    keySpecs:
      - name: doc
        kind: structured
    functions:
      - name: bump
        qos:
          throughput: 300
        x-sim:
          archetype: chatty
          serviceTime: { meanMs: 1.0, cv: 0.2 }
          bytesIn: 1024
          bytesOut: 1024
"""


def main():
    assert oaas_mini.required_replicas(0.999, 0.9) == 3
    assert "tp-chatty-10k" in oaas_mini.presets()

    classes = oaas_mini.load_classes(MANIFEST)
    assert classes[0]["name"] == "Counter"

    p = oaas_mini.Platform(seed=7)
    infos = p.deploy(MANIFEST)
    assert infos[0]["class"] == "Counter"
    oid = p.create_object("Counter", {"doc": {"k0": 0}})
    outs = p.invoke_chain("Counter", oid, ["bump", "bump"])
    assert len(outs) == 2
    assert p.object("Counter", oid)["revision"] == 2
    p.run_for(1.0)
    p.audit()
    assert p.now >= 1.0

    try:
        p.deploy(MANIFEST, policy="nope")
    except ValueError:
        pass
    else:
        raise AssertionError("bad policy accepted")

    print("oaas_mini smoke test ok:", outs[-1]["status"], p.counters())


if __name__ == "__main__":
    main()
