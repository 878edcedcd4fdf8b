import { describe, expect, it } from "vitest";

import { KbModel, TreeJson, TreeModel } from "../src/model.js";

// 4x4 scene: a "ground" region on the bottom half, a person instance in
// its top-left 2x2 corner of the bottom half, with a head part pixel
function rle(counts: number[]) {
  return { order: "row-major", width: 4, height: 4, counts };
}

const TREE: TreeJson = {
  image_id: "img-0",
  width: 4,
  height: 4,
  kb_version: "v0",
  nodes: [
    { id: 0, class: 0, is_instance: true, rle: null, children: [1] },
    // rows 2..3 set
    { id: 1, class: 1, is_instance: false, rle: rle([8, 8]), children: [2] },
    // pixels (0,2),(1,2),(0,3),(1,3)
    {
      id: 2,
      class: 2,
      is_instance: true,
      rle: rle([8, 2, 2, 2, 2]),
      children: [3],
    },
    // single pixel (1,2)
    { id: 3, class: 3, is_instance: false, rle: rle([9, 1, 6]), children: [] },
  ],
};

const KB = {
  version_id: "v0",
  parent_version: null,
  created_at: "2026-01-01T00:00:00+00:00",
  concepts: [
    { id: 0, label: "scene", countable: true, children: [1] },
    { id: 1, label: "ground", countable: false, children: [2] },
    { id: 2, label: "person", countable: true, children: [3] },
    { id: 3, label: "head", countable: false, children: [] },
  ],
};

describe("TreeModel", () => {
  it("derives parents and depths from the children lists", () => {
    const model = new TreeModel(TREE);
    expect(model.root.parent).toBeNull();
    expect(model.nodes.get(1)!.parent).toBe(0);
    expect(model.nodes.get(2)!.parent).toBe(1);
    expect(model.nodes.get(3)!.depth).toBe(3);
    expect(model.bfs().map((n) => n.id)).toEqual([0, 1, 2, 3]);
  });

  it("treats the null rle as the full canvas", () => {
    const model = new TreeModel(TREE);
    expect(model.root.mask.data.every((v) => v === 1)).toBe(true);
  });

  it("resolves clicks to the deepest semantic node", () => {
    const model = new TreeModel(TREE);
    // top half: no semantic coverage at all
    expect(model.deepestSemanticAt(0, 0)).toBeNull();
    // ground but outside the person
    expect(model.deepestSemanticAt(3, 3)!.id).toBe(1);
    // inside the person but not the head: still the ground region
    expect(model.deepestSemanticAt(0, 2)!.id).toBe(1);
    // the head pixel wins by depth
    expect(model.deepestSemanticAt(1, 2)!.id).toBe(3);
    expect(model.deepestSemanticAt(-1, 2)).toBeNull();
  });
});

describe("KbModel", () => {
  it("maps labels, countability, and parts", () => {
    const kb = new KbModel(KB);
    expect(kb.label(2)).toBe("person");
    expect(kb.label(99)).toBe("class 99");
    expect(kb.countable(2)).toBe(true);
    expect(kb.countable(1)).toBe(false);
    expect(kb.parts(2).map((c) => c.label)).toEqual(["head"]);
    expect(kb.parts(3)).toEqual([]);
  });
});
