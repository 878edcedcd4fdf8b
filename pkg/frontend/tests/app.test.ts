import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { AnnotatorApp } from "../src/app.js";
import { TreeJson } from "../src/model.js";
import { mountDom } from "./dom.js";

// canned service: one 4x4 image, root expands into a ground region plus a
// person region, probing the person region yields instance 3
const KB = {
  version_id: "v0",
  parent_version: null,
  created_at: "2026-01-01T00:00:00+00:00",
  concepts: [
    { id: 0, label: "scene", countable: true, children: [1, 2] },
    { id: 1, label: "ground", countable: false, children: [] },
    { id: 2, label: "person", countable: true, children: [3] },
    { id: 3, label: "head", countable: false, children: [] },
  ],
};

function rle(counts: number[]) {
  return { order: "row-major", width: 4, height: 4, counts };
}

const ROOT_ONLY: TreeJson = {
  image_id: "img-0",
  width: 4,
  height: 4,
  kb_version: "v0",
  nodes: [{ id: 0, class: 0, is_instance: true, rle: null, children: [] }],
};

const EXPANDED: TreeJson = {
  image_id: "img-0",
  width: 4,
  height: 4,
  kb_version: "v0",
  nodes: [
    { id: 0, class: 0, is_instance: true, rle: null, children: [1, 2] },
    { id: 1, class: 1, is_instance: false, rle: rle([8, 8]), children: [] },
    { id: 2, class: 2, is_instance: false, rle: rle([0, 4, 12]), children: [] },
  ],
};

const PROBED: TreeJson = {
  ...EXPANDED,
  nodes: [
    { id: 0, class: 0, is_instance: true, rle: null, children: [1, 2] },
    { id: 1, class: 1, is_instance: false, rle: rle([8, 8]), children: [] },
    { id: 2, class: 2, is_instance: false, rle: rle([0, 4, 12]), children: [3] },
    { id: 3, class: 2, is_instance: true, rle: rle([0, 2, 14]), children: [] },
  ],
};

interface ServiceState {
  tree: TreeJson;
  etag: string;
  requests: { kind: string; node: number; probe?: number[] }[];
}

function fakeService(state: ServiceState): typeof fetch {
  return (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    const method = init?.method ?? "GET";
    const json = (body: unknown, headers: Record<string, string> = {}) =>
      new Response(JSON.stringify(body), {
        status: 200,
        headers: { "Content-Type": "application/json", ...headers },
      });
    if (url.endsWith("/sessions") && method === "POST") {
      return json({ session_id: "s1", etag: state.etag, kb_version: "v0" });
    }
    if (url.endsWith("/kb/v0")) {
      return json(KB);
    }
    if (url.endsWith("/tree")) {
      return json(state.tree, { ETag: state.etag });
    }
    if (url.endsWith("/requests") && method === "POST") {
      const body = JSON.parse(String(init?.body));
      state.requests.push(body);
      if (body.kind === "I" && body.node === 0) {
        state.tree = EXPANDED;
        state.etag = "etag-expanded";
        return json({
          applied: EXPANDED.nodes.slice(1),
          lost: false,
          etag: state.etag,
        });
      }
      if (body.kind === "II") {
        if (body.node === 1) {
          return json({ applied: [], lost: true, etag: state.etag });
        }
        state.tree = PROBED;
        state.etag = "etag-probed";
        return json({
          applied: [PROBED.nodes[3]],
          lost: false,
          etag: state.etag,
        });
      }
      return json({ applied: [], lost: false, etag: state.etag });
    }
    if (url.endsWith("/undo") && method === "POST") {
      state.tree = EXPANDED;
      state.etag = "etag-expanded";
      return json({ undone: true, etag: state.etag, tree: state.tree });
    }
    if (url.endsWith("/export") && method === "POST") {
      return json({
        etag: state.etag,
        tree: state.tree,
        log: [{ image_id: "img-0" }],
        paths: { tree: "/tmp/t.json", requests: "/tmp/r.jsonl" },
      });
    }
    return new Response(JSON.stringify({ code: "unknown", message: url }), {
      status: 404,
    });
  }) as typeof fetch;
}

describe("AnnotatorApp", () => {
  let state: ServiceState;
  let app: AnnotatorApp;

  beforeEach(() => {
    mountDom(document);
    state = { tree: ROOT_ONLY, etag: "etag-root", requests: [] };
    app = new AnnotatorApp(
      document,
      new ApiClient("http://svc", fakeService(state)),
    );
  });

  function click(id: string): void {
    document.getElementById(id)!.dispatchEvent(new MouseEvent("click"));
  }

  it("ignores actions before a session exists", async () => {
    click("expand");
    click("undo");
    click("export");
    await app.idle();
    expect(state.requests).toHaveLength(0);
    expect(app.lastExport).toBeNull();
  });

  it("starts a session, selects the root, and lists the tree", async () => {
    click("start");
    await app.idle();
    expect(app.selectedNodeId).toBe(0);
    expect(app.currentEtag).toBe("etag-root");
    const status = document.getElementById("status")!.textContent;
    expect(status).toContain("session s1");
    const buttons = document.querySelectorAll("#tree button.node");
    expect(buttons.length).toBe(1);
    expect(buttons[0].textContent).toContain("scene #0");
  });

  it("expands the selected instance and shows the regions", async () => {
    click("start");
    click("expand");
    await app.idle();
    expect(state.requests).toEqual([{ kind: "I", node: 0 }]);
    expect(app.currentEtag).toBe("etag-expanded");
    const labels = Array.from(
      document.querySelectorAll("#tree button.node"),
      (b) => b.textContent,
    );
    expect(labels.some((t) => t?.includes("ground #1"))).toBe(true);
    expect(labels.some((t) => t?.includes("person #2"))).toBe(true);
  });

  it("asks for an expansion before probing a bare root", async () => {
    click("start");
    await app.idle();
    const canvas = document.getElementById("scene")!;
    canvas.dispatchEvent(new MouseEvent("click", { clientX: 1, clientY: 1 }));
    await app.idle();
    expect(state.requests).toHaveLength(0);
    expect(document.getElementById("status")!.textContent).toContain(
      "expand the scene",
    );
  });

  it("maps a click to a probe on the deepest region and selects the hit", async () => {
    click("start");
    click("expand");
    await app.idle();
    const canvas = document.getElementById("scene")!;
    // pixel (2, 0) lies in the person region (top row)
    canvas.dispatchEvent(new MouseEvent("click", { clientX: 2, clientY: 0 }));
    await app.idle();
    expect(state.requests[1]).toEqual({ kind: "II", node: 2, probe: [2, 0] });
    expect(app.selectedNodeId).toBe(3);
    expect(app.currentEtag).toBe("etag-probed");
  });

  it("reports lost probes without changing the selection", async () => {
    click("start");
    click("expand");
    await app.idle();
    const canvas = document.getElementById("scene")!;
    // pixel (0, 2) lies in the stuff region; the fake replies lost
    canvas.dispatchEvent(new MouseEvent("click", { clientX: 0, clientY: 2 }));
    await app.idle();
    expect(app.selectedNodeId).toBe(0);
    expect(document.getElementById("status")!.textContent).toContain(
      "no ground",
    );
  });

  it("refuses to expand a semantic region", async () => {
    click("start");
    click("expand");
    await app.idle();
    app.selectNode(1);
    click("expand");
    await app.idle();
    expect(state.requests).toHaveLength(1);
    expect(document.getElementById("status")!.textContent).toContain(
      "select an instance",
    );
  });

  it("applies the undo response tree directly", async () => {
    click("start");
    click("expand");
    await app.idle();
    const canvas = document.getElementById("scene")!;
    canvas.dispatchEvent(new MouseEvent("click", { clientX: 2, clientY: 0 }));
    await app.idle();
    click("undo");
    await app.idle();
    expect(app.currentEtag).toBe("etag-expanded");
    // the selection fell back to the root when node 3 vanished
    expect(app.selectedNodeId).toBe(0);
  });

  it("keeps the export payload for download", async () => {
    click("start");
    click("export");
    await app.idle();
    expect(app.lastExport?.etag).toBe("etag-root");
    expect(document.getElementById("status")!.textContent).toContain(
      "exported 1 log lines",
    );
  });

  it("shows the sub-knowledge legend for the selection", async () => {
    click("start");
    click("expand");
    await app.idle();
    app.selectNode(2);
    const legend = document.getElementById("legend")!;
    expect(legend.textContent).toContain("parts of person");
    expect(legend.textContent).toContain("head (stuff)");
  });
});
