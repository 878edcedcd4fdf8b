/**
 * Client-side views of the server's tree and knowledge-base documents.
 * The server is the source of truth; these models are rebuilt from its
 * JSON after every mutation and never edited locally.
 */

import { Mask, Rle, decodeRle, fullMask, maskGet } from "./rle.js";

export interface TreeNodeJson {
  id: number;
  class: number;
  is_instance: boolean;
  rle: Rle | null;
  children: number[];
}

export interface TreeJson {
  image_id: string;
  width: number;
  height: number;
  kb_version: string;
  nodes: TreeNodeJson[];
}

export interface ConceptJson {
  id: number;
  label: string;
  countable: boolean;
  children: number[];
}

export interface KbJson {
  version_id: string;
  parent_version: string | null;
  created_at: string;
  concepts: ConceptJson[];
}

export interface NodeView {
  id: number;
  classId: number;
  isInstance: boolean;
  parent: number | null;
  children: number[];
  depth: number;
  mask: Mask;
}

export class TreeModel {
  readonly imageId: string;
  readonly width: number;
  readonly height: number;
  readonly kbVersion: string;
  readonly nodes = new Map<number, NodeView>();

  constructor(doc: TreeJson) {
    this.imageId = doc.image_id;
    this.width = doc.width;
    this.height = doc.height;
    this.kbVersion = doc.kb_version;
    for (const n of doc.nodes) {
      this.nodes.set(n.id, {
        id: n.id,
        classId: n.class,
        isInstance: n.is_instance,
        parent: null,
        children: n.children.slice(),
        depth: 0,
        mask: n.rle ? decodeRle(n.rle) : fullMask(doc.width, doc.height),
      });
    }
    const queue = [0];
    while (queue.length) {
      const id = queue.shift()!;
      const node = this.nodes.get(id);
      if (!node) continue;
      for (const child of node.children) {
        const view = this.nodes.get(child);
        if (view) {
          view.parent = id;
          view.depth = node.depth + 1;
          queue.push(child);
        }
      }
    }
  }

  get root(): NodeView {
    return this.nodes.get(0)!;
  }

  /** Nodes in breadth-first order, the order the server assigned ids. */
  bfs(): NodeView[] {
    const out: NodeView[] = [];
    const queue = [0];
    while (queue.length) {
      const node = this.nodes.get(queue.shift()!);
      if (!node) continue;
      out.push(node);
      queue.push(...node.children);
    }
    return out;
  }

  /**
   * The deepest semantic node covering a pixel; this is the node a click
   * probes. Depth breaks ties first, then lower id (the older sibling)
   * for overlapping instance subtrees.
   */
  deepestSemanticAt(a: number, b: number): NodeView | null {
    let best: NodeView | null = null;
    for (const node of this.bfs()) {
      if (node.isInstance || !maskGet(node.mask, a, b)) continue;
      if (!best || node.depth > best.depth) {
        best = node;
      }
    }
    return best;
  }
}

export class KbModel {
  readonly versionId: string;
  readonly concepts = new Map<number, ConceptJson>();

  constructor(doc: KbJson) {
    this.versionId = doc.version_id;
    for (const c of doc.concepts) {
      this.concepts.set(c.id, c);
    }
  }

  label(classId: number): string {
    return this.concepts.get(classId)?.label ?? `class ${classId}`;
  }

  countable(classId: number): boolean {
    return this.concepts.get(classId)?.countable ?? false;
  }

  /** Concepts a Type-I request on this class can produce. */
  parts(classId: number): ConceptJson[] {
    const concept = this.concepts.get(classId);
    if (!concept) return [];
    return concept.children
      .map((id) => this.concepts.get(id))
      .filter((c): c is ConceptJson => c !== undefined);
  }
}
