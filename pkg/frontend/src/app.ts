/**
 * Annotator controller. All state shown in the UI is rebuilt from server
 * responses; the client never mutates a tree locally. Operations run one
 * at a time through a promise chain so a scripted driver (or an impatient
 * user) cannot interleave conflicting requests.
 */

import { ApiClient, ApiError, ExportResponse } from "./api.js";
import { KbModel, TreeModel } from "./model.js";
import { classColor, cssColor } from "./palette.js";
import { drawScene } from "./render.js";

interface SessionState {
  id: string;
  imageId: string;
  kbVersion: string;
}

function byId<T extends HTMLElement>(doc: Document, id: string): T {
  const el = doc.getElementById(id);
  if (!el) throw new Error(`missing #${id} in the document`);
  return el as T;
}

export class AnnotatorApp {
  private session: SessionState | null = null;
  private model: TreeModel | null = null;
  private kb: KbModel | null = null;
  private etag = "";
  private selectedId: number | null = null;
  private image: HTMLImageElement | null = null;
  private busy: Promise<void> = Promise.resolve();
  private keyCounter = 0;
  lastExport: ExportResponse | null = null;

  private readonly canvas: HTMLCanvasElement;
  private readonly imageInput: HTMLInputElement;
  private readonly backendSelect: HTMLSelectElement;
  private readonly status: HTMLElement;
  private readonly treePanel: HTMLElement;
  private readonly legendPanel: HTMLElement;
  private readonly expandButton: HTMLButtonElement;

  constructor(
    private readonly doc: Document,
    private readonly client: ApiClient,
  ) {
    this.canvas = byId(doc, "scene");
    this.imageInput = byId(doc, "image-id");
    this.backendSelect = byId(doc, "backend");
    this.status = byId(doc, "status");
    this.treePanel = byId(doc, "tree");
    this.legendPanel = byId(doc, "legend");
    this.expandButton = byId(doc, "expand");

    byId(doc, "start").addEventListener("click", () =>
      this.run(() => this.startSession()),
    );
    this.canvas.addEventListener("click", (ev) =>
      this.run(() => this.onCanvasClick(ev as MouseEvent)),
    );
    this.expandButton.addEventListener("click", () =>
      this.run(() => this.expandSelected()),
    );
    byId(doc, "undo").addEventListener("click", () =>
      this.run(() => this.undo()),
    );
    byId(doc, "export").addEventListener("click", () =>
      this.run(() => this.exportSession()),
    );
  }

  /** Resolves once every queued operation has settled. */
  idle(): Promise<void> {
    return this.busy;
  }

  get currentEtag(): string {
    return this.etag;
  }

  get sessionId(): string | null {
    return this.session?.id ?? null;
  }

  get selectedNodeId(): number | null {
    return this.selectedId;
  }

  private run(task: () => Promise<void>): void {
    this.busy = this.busy.then(task).catch((err) => this.showError(err));
  }

  private showError(err: unknown): void {
    if (err instanceof ApiError) {
      this.status.textContent = `error ${err.code}: ${err.message}`;
    } else {
      this.status.textContent = `error: ${String(err)}`;
    }
  }

  private setStatus(text: string): void {
    this.status.textContent = text;
  }

  private nextKey(): string {
    this.keyCounter += 1;
    return `ui-${Date.now()}-${this.keyCounter}`;
  }

  async startSession(): Promise<void> {
    const imageId = this.imageInput.value.trim();
    const backend = this.backendSelect.value || "oracle";
    const info = await this.client.createSession(imageId, backend);
    this.session = {
      id: info.session_id,
      imageId,
      kbVersion: info.kb_version,
    };
    this.kb = new KbModel(await this.client.getKb(info.kb_version));
    this.lastExport = null;
    this.selectedId = 0;
    this.loadImage(imageId);
    await this.refreshTree();
    this.setStatus(`session ${info.session_id} on ${imageId}`);
  }

  private loadImage(imageId: string): void {
    try {
      const img = new Image();
      img.onload = () => this.render();
      img.src = this.client.imageUrl(imageId);
      this.image = img;
    } catch {
      this.image = null;
    }
  }

  private async refreshTree(): Promise<void> {
    if (!this.session) return;
    const { tree, etag } = await this.client.getTree(this.session.id);
    this.applyTree(new TreeModel(tree), etag);
  }

  private applyTree(model: TreeModel, etag: string): void {
    this.model = model;
    this.etag = etag;
    if (this.selectedId !== null && !model.nodes.has(this.selectedId)) {
      this.selectedId = 0;
    }
    this.render();
    this.renderTreePanel();
    this.renderLegend();
  }

  private async onCanvasClick(ev: MouseEvent): Promise<void> {
    if (!this.session || !this.model) return;
    const rect = this.canvas.getBoundingClientRect();
    const scaleX = rect.width > 0 ? this.model.width / rect.width : 1;
    const scaleY = rect.height > 0 ? this.model.height / rect.height : 1;
    const a = Math.floor((ev.clientX - rect.left) * scaleX);
    const b = Math.floor((ev.clientY - rect.top) * scaleY);
    if (a < 0 || b < 0 || a >= this.model.width || b >= this.model.height) {
      return;
    }
    const target = this.model.deepestSemanticAt(a, b);
    if (!target) {
      this.setStatus("expand the scene before probing pixels");
      return;
    }
    const response = await this.client.postRequest(
      this.session.id,
      { kind: "II", node: target.id, probe: [a, b] },
      this.nextKey(),
    );
    if (response.lost) {
      this.setStatus(
        `no ${this.kb?.label(target.classId) ?? "instance"} at (${a}, ${b})`,
      );
      return;
    }
    this.selectedId = response.applied[0]?.id ?? this.selectedId;
    await this.refreshTree();
    this.setStatus(`probe (${a}, ${b}) resolved node ${this.selectedId}`);
  }

  async expandSelected(): Promise<void> {
    if (!this.session || !this.model || this.selectedId === null) return;
    const node = this.model.nodes.get(this.selectedId);
    if (!node || !node.isInstance) {
      this.setStatus("select an instance to expand");
      return;
    }
    const response = await this.client.postRequest(
      this.session.id,
      { kind: "I", node: node.id },
      this.nextKey(),
    );
    await this.refreshTree();
    this.setStatus(
      `expanded node ${node.id} into ${response.applied.length} regions`,
    );
  }

  async undo(): Promise<void> {
    if (!this.session) return;
    const response = await this.client.undo(this.session.id);
    this.applyTree(new TreeModel(response.tree), response.etag);
    this.setStatus(response.undone ? "undid last request" : "nothing to undo");
  }

  async exportSession(): Promise<void> {
    if (!this.session) return;
    const response = await this.client.exportSession(this.session.id);
    this.lastExport = response;
    this.setStatus(`exported ${response.log.length} log lines, etag ${response.etag}`);
  }

  selectNode(id: number): void {
    if (!this.model || !this.model.nodes.has(id)) return;
    this.selectedId = id;
    this.render();
    this.renderTreePanel();
    this.renderLegend();
  }

  private render(): void {
    if (!this.model || !this.kb) return;
    drawScene(this.canvas, this.image, this.model, this.kb, this.selectedId);
  }

  private renderTreePanel(): void {
    const model = this.model;
    const kb = this.kb;
    this.treePanel.textContent = "";
    if (!model || !kb) return;
    const build = (id: number): HTMLElement => {
      const node = model.nodes.get(id)!;
      const li = this.doc.createElement("li");
      const button = this.doc.createElement("button");
      button.className = node.isInstance ? "node instance" : "node region";
      if (id === this.selectedId) button.classList.add("selected");
      button.dataset.nodeId = String(id);
      const role = node.isInstance ? "instance" : "region";
      button.textContent = `${kb.label(node.classId)} #${id} (${role})`;
      const swatch = this.doc.createElement("span");
      swatch.className = "swatch";
      swatch.style.backgroundColor = cssColor(
        classColor(kb.label(node.classId)),
      );
      button.prepend(swatch);
      button.addEventListener("click", () => this.selectNode(id));
      li.appendChild(button);
      if (node.children.length) {
        const ul = this.doc.createElement("ul");
        for (const child of node.children) ul.appendChild(build(child));
        li.appendChild(ul);
      }
      return li;
    };
    this.treePanel.appendChild(build(0));
  }

  /** Sub-knowledge of the selection: what a Type-I request would return. */
  private renderLegend(): void {
    const kb = this.kb;
    const model = this.model;
    this.legendPanel.textContent = "";
    if (!kb || !model || this.selectedId === null) return;
    const node = model.nodes.get(this.selectedId);
    if (!node) return;
    const title = this.doc.createElement("h3");
    title.textContent = `parts of ${kb.label(node.classId)}`;
    this.legendPanel.appendChild(title);
    for (const concept of kb.parts(node.classId)) {
      const row = this.doc.createElement("div");
      row.className = "legend-row";
      const swatch = this.doc.createElement("span");
      swatch.className = "swatch";
      swatch.style.backgroundColor = cssColor(classColor(concept.label));
      const text = this.doc.createElement("span");
      text.textContent = `${concept.label} (${
        concept.countable ? "thing" : "stuff"
      })`;
      row.append(swatch, text);
      this.legendPanel.appendChild(row);
    }
  }
}
