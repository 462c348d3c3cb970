/**
 * Single-page UI for the timbre generation service.
 *
 * Every user action maps to exactly one service call; all synthesis happens
 * server-side. The page keeps a session tree of results (edits are children
 * of the item they started from), a paintable keep/regenerate mask aligned
 * with the spectrogram raster, and an A/B player for parent/child listening.
 */

import {
  ApiError,
  EditParams,
  GenerateParams,
  JobResult,
  ServiceClient,
  ServiceInfo,
} from "./api.js";
import { MaskCanvasState, RlePayload } from "./mask.js";
import { SessionHistory, SessionItem } from "./history.js";
import { AbPlayer, objectUrlForWav, wavBlob } from "./audio.js";

type EditMode = "inpaint" | "transform" | "extend";

interface UiBounds {
  maxSteps: number;
  maxPromptChars: number;
  sampleRate: number;
  diffusionT: number;
  gridHeight: number;
  gridWidth: number;
}

/** Pull field bounds out of the service's OpenAPI document. */
export function boundsFromOpenApi(spec: unknown, fallback: UiBounds): UiBounds {
  const out = { ...fallback };
  const schemas = (spec as any)?.components?.schemas;
  const props = schemas?.GenerateRequest?.properties;
  if (props?.prompt?.maxLength) out.maxPromptChars = props.prompt.maxLength;
  return out;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function download(name: string, blob: Blob): void {
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = name;
  a.click();
  URL.revokeObjectURL(a.href);
}

function spectrogramUrl(item: SessionItem): string {
  return `data:image/png;base64,${item.spectrogram.base64}`;
}

/** Render the 0/1 keep-mask as a black/white PNG blob (white = keep). */
async function maskToPngBlob(mask: MaskCanvasState): Promise<Blob> {
  const canvas = document.createElement("canvas");
  canvas.width = mask.width;
  canvas.height = mask.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  const img = ctx.createImageData(mask.width, mask.height);
  const raster = mask.toArray();
  for (let i = 0; i < raster.length; i++) {
    const v = raster[i] ? 255 : 0;
    img.data[4 * i] = v;
    img.data[4 * i + 1] = v;
    img.data[4 * i + 2] = v;
    img.data[4 * i + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
  return new Promise((resolve, reject) => {
    canvas.toBlob((b) => (b ? resolve(b) : reject(new Error("mask PNG export failed"))), "image/png");
  });
}

class App {
  private readonly client: ServiceClient;
  private readonly history = new SessionHistory();
  private bounds: UiBounds = {
    maxSteps: 400,
    maxPromptChars: 256,
    sampleRate: 4000,
    diffusionT: 400,
    gridHeight: 128,
    gridWidth: 128,
  };
  private selectedId: string | null = null;
  private editMode: EditMode = "transform";
  private mask: MaskCanvasState | null = null;
  private maskValue: 0 | 1 = 0; // painting with 0 marks cells to regenerate
  private generateBusy = false;
  private editBusy = false;
  private abPlayer: AbPlayer | null = null;
  private playing: HTMLAudioElement | null = null;

  // stable references to controls that other handlers need to reach
  private healthDot = el("span", "health-dot");
  private healthText = el("span", "health-text", "checking…");
  private errorBanner = el("div", "error-banner hidden");
  private promptInput = el("textarea", "prompt-input");
  private guidanceSlider = el("input") as HTMLInputElement;
  private guidanceLabel = el("span", "slider-value");
  private seedInput = el("input") as HTMLInputElement;
  private stepsInput = el("input") as HTMLInputElement;
  private generateButton = el("button", "primary", "Generate");
  private historyRoot = el("div", "history-tree");
  private editRoot = el("div", "edit-panel");
  private abRoot = el("div", "ab-root hidden");

  constructor(private readonly root: HTMLElement, client?: ServiceClient) {
    this.client = client ?? new ServiceClient("");
  }

  async start(): Promise<void> {
    this.buildLayout();
    await this.refreshHealth();
    try {
      const info: ServiceInfo = await this.client.config();
      const diffusion = info.config.diffusion as { T?: number } | undefined;
      const fallback: UiBounds = {
        maxSteps: info.limits.max_steps,
        maxPromptChars: info.limits.max_prompt_chars,
        sampleRate: info.limits.sample_rate,
        diffusionT: diffusion?.T ?? this.bounds.diffusionT,
        gridHeight: info.grid_shape[0],
        gridWidth: info.grid_shape[1],
      };
      this.bounds = boundsFromOpenApi(await this.client.openapi(), fallback);
      this.applyBounds();
    } catch (err) {
      this.showError(err, "could not load service configuration");
    }
    window.setInterval(() => void this.refreshHealth(), 10000);
  }

  // -- layout -----------------------------------------------------------

  private buildLayout(): void {
    const header = el("header");
    header.append(el("h1", undefined, "timbregen"), this.healthDot, this.healthText);
    const columns = el("div", "columns");
    columns.append(this.buildGeneratePanel(), this.buildHistoryPanel(), this.editRoot);
    this.root.append(header, this.errorBanner, columns, this.abRoot);
    this.renderHistory();
    this.renderEditPanel();
  }

  private buildGeneratePanel(): HTMLElement {
    const panel = el("section", "panel generate-panel");
    panel.append(el("h2", undefined, "Generate"));

    this.promptInput.placeholder = "e.g. a dark bass note";
    panel.append(this.labelled("Prompt", this.promptInput));

    this.guidanceSlider.type = "range";
    this.guidanceSlider.min = "0";
    this.guidanceSlider.max = "10";
    this.guidanceSlider.step = "0.5";
    this.guidanceSlider.value = "2";
    this.guidanceLabel.textContent = "2";
    this.guidanceSlider.addEventListener("input", () => {
      this.guidanceLabel.textContent = this.guidanceSlider.value;
    });
    const guidanceRow = el("div", "slider-row");
    guidanceRow.append(this.guidanceSlider, this.guidanceLabel);
    panel.append(this.labelled("Guidance w", guidanceRow));

    this.seedInput.type = "number";
    this.seedInput.value = "0";
    panel.append(this.labelled("Seed", this.seedInput));

    this.stepsInput.type = "number";
    this.stepsInput.placeholder = "default";
    this.stepsInput.min = "1";
    panel.append(this.labelled("Steps", this.stepsInput));

    this.generateButton.addEventListener("click", () => void this.submitGenerate());
    panel.append(this.generateButton);
    return panel;
  }

  private buildHistoryPanel(): HTMLElement {
    const panel = el("section", "panel history-panel");
    panel.append(el("h2", undefined, "Session"), this.historyRoot);
    return panel;
  }

  private labelled(text: string, control: HTMLElement): HTMLElement {
    const row = el("label", "field");
    row.append(el("span", "field-name", text), control);
    return row;
  }

  private applyBounds(): void {
    this.promptInput.maxLength = this.bounds.maxPromptChars;
    this.stepsInput.max = String(this.bounds.maxSteps);
  }

  // -- health / errors --------------------------------------------------

  private async refreshHealth(): Promise<void> {
    try {
      const status = await this.client.health();
      const up = status.status === "ok";
      this.healthDot.className = up ? "health-dot up" : "health-dot down";
      this.healthText.textContent = up ? "service up" : `unavailable: ${status.detail ?? "loading"}`;
    } catch {
      this.healthDot.className = "health-dot down";
      this.healthText.textContent = "service unreachable";
    }
  }

  private showError(err: unknown, context: string): void {
    const detail =
      err instanceof ApiError
        ? err.status === 0
          ? "service unreachable"
          : `${err.status}: ${err.detail}`
        : String(err);
    this.errorBanner.textContent = `${context} — ${detail}`;
    this.errorBanner.className = "error-banner";
  }

  private clearError(): void {
    this.errorBanner.className = "error-banner hidden";
  }

  // -- generate ---------------------------------------------------------

  private readGenerateParams(): GenerateParams {
    const params: GenerateParams = {
      prompt: this.promptInput.value,
      guidance_w: Number(this.guidanceSlider.value),
      seed: Number(this.seedInput.value) || 0,
    };
    if (this.stepsInput.value) params.steps = Number(this.stepsInput.value);
    return params;
  }

  private async submitGenerate(): Promise<void> {
    if (this.generateBusy) return;
    this.generateBusy = true;
    this.generateButton.disabled = true;
    this.clearError();
    try {
      const result = await this.client.generate(this.readGenerateParams());
      const audio = await this.client.audioBytes(result);
      this.history.add(result, audio, null);
      this.renderHistory();
    } catch (err) {
      this.showError(err, "generate failed"); // nothing is appended to the session
    } finally {
      this.generateBusy = false;
      this.generateButton.disabled = false;
    }
  }

  // -- history ----------------------------------------------------------

  private requireItem(id: string): SessionItem {
    const item = this.requireItem(id);
    if (item === undefined) throw new Error(`no history item ${id}`);
    return item;
  }

  private renderHistory(): void {
    this.historyRoot.replaceChildren();
    if (this.history.size === 0) {
      this.historyRoot.append(el("p", "empty-note", "No results yet — generate something."));
      return;
    }
    const list = el("ul", "tree-level");
    for (const root of this.history.roots()) list.append(this.renderNode(root));
    this.historyRoot.append(list);
  }

  private renderNode(item: SessionItem): HTMLElement {
    const li = el("li", "tree-node");
    const card = el("div", item.id === this.selectedId ? "item-card selected" : "item-card");

    const img = el("img", "spectrogram") as HTMLImageElement;
    img.src = spectrogramUrl(item);
    img.width = item.spectrogram.width;
    img.height = item.spectrogram.height;
    card.append(img);

    const caption = el("div", "caption");
    const title =
      typeof item.params.prompt === "string" && item.params.prompt
        ? item.params.prompt
        : String(item.params.command ?? "result");
    caption.append(el("span", "title", title));
    if (item.duplicate) caption.append(el("span", "badge", "duplicate params"));
    card.append(caption);

    const actions = el("div", "actions");
    actions.append(
      this.actionButton("Play", () => this.togglePlay(item)),
      this.actionButton("Edit", () => this.selectItem(item.id)),
      this.actionButton("Params", () => this.exportParams(item)),
      this.actionButton("WAV", () => download(`${item.id}.wav`, new Blob([new Uint8Array(item.audio)], { type: "audio/wav" }))),
      this.actionButton("Delete", () => this.deleteItem(item.id)),
    );
    if (item.parentId !== null) {
      actions.append(this.actionButton("A/B parent", () => this.openAb(item)));
    }
    card.append(actions);
    li.append(card);

    const children = this.history.children(item.id);
    if (children.length > 0) {
      const sub = el("ul", "tree-level");
      for (const child of children) sub.append(this.renderNode(child));
      li.append(sub);
    }
    return li;
  }

  private actionButton(label: string, onClick: () => void): HTMLButtonElement {
    const b = el("button", "small", label);
    b.addEventListener("click", onClick);
    return b;
  }

  private togglePlay(item: SessionItem): void {
    if (this.playing) {
      this.playing.pause();
      this.playing = null;
      return;
    }
    const audio = new Audio(objectUrlForWav(item.audio));
    audio.addEventListener("ended", () => {
      if (this.playing === audio) this.playing = null;
    });
    this.playing = audio;
    void audio.play();
  }

  private exportParams(item: SessionItem): void {
    const json = this.history.exportParams(item.id);
    download(`${item.id}.params.json`, new Blob([json], { type: "application/json" }));
  }

  private deleteItem(id: string): void {
    const removed = this.history.delete(id);
    if (this.selectedId !== null && removed.includes(this.selectedId)) {
      this.selectedId = null;
      this.mask = null;
    }
    this.renderHistory();
    this.renderEditPanel();
  }

  private selectItem(id: string): void {
    this.selectedId = id;
    const item = this.requireItem(id);
    this.mask = new MaskCanvasState(item.spectrogram.height, item.spectrogram.width);
    this.renderHistory();
    this.renderEditPanel();
  }

  // -- A/B player -------------------------------------------------------

  private openAb(item: SessionItem): void {
    if (item.parentId === null) return;
    const parent = this.requireItem(item.parentId);
    this.abRoot.replaceChildren();
    this.abRoot.className = "ab-root";
    const deckA = new Audio();
    const deckB = new Audio();
    this.abPlayer = new AbPlayer(deckA, deckB);
    this.abPlayer.load(parent.audio, item.audio);

    const bar = el("div", "ab-bar");
    bar.append(el("span", undefined, "A = parent, B = this"));
    const play = el("button", "small", "Play");
    play.addEventListener("click", () => this.abPlayer?.play());
    const pause = el("button", "small", "Pause");
    pause.addEventListener("click", () => this.abPlayer?.pause());
    const toggle = el("button", "small", "Switch deck");
    const deckLabel = el("span", "deck-label", "deck: A");
    toggle.addEventListener("click", () => {
      this.abPlayer?.toggle();
      deckLabel.textContent = `deck: ${this.abPlayer?.activeDeck.toUpperCase()}`;
    });
    const close = el("button", "small", "Close");
    close.addEventListener("click", () => {
      this.abPlayer?.pause();
      this.abPlayer = null;
      this.abRoot.className = "ab-root hidden";
    });
    bar.append(play, pause, toggle, deckLabel, close);
    this.abRoot.append(bar);
  }

  // -- edit panel -------------------------------------------------------

  private renderEditPanel(): void {
    this.editRoot.replaceChildren();
    this.editRoot.className = "panel edit-panel";
    this.editRoot.append(el("h2", undefined, "Edit"));
    if (this.selectedId === null) {
      this.editRoot.append(el("p", "empty-note", "Select a session item to edit."));
      return;
    }
    const item = this.requireItem(this.selectedId);

    const tabs = el("div", "tabs");
    for (const mode of ["transform", "inpaint", "extend"] as EditMode[]) {
      const b = el("button", mode === this.editMode ? "tab active" : "tab", mode);
      b.addEventListener("click", () => {
        this.editMode = mode;
        this.renderEditPanel();
      });
      tabs.append(b);
    }
    this.editRoot.append(tabs);

    const prompt = el("textarea", "prompt-input") as HTMLTextAreaElement;
    prompt.maxLength = this.bounds.maxPromptChars;
    prompt.placeholder = "prompt for the edit";
    this.editRoot.append(this.labelled("Prompt", prompt));

    const guidance = el("input") as HTMLInputElement;
    guidance.type = "range";
    guidance.min = "0";
    guidance.max = "10";
    guidance.step = "0.5";
    guidance.value = "2";
    const gLabel = el("span", "slider-value", "2");
    guidance.addEventListener("input", () => (gLabel.textContent = guidance.value));
    const gRow = el("div", "slider-row");
    gRow.append(guidance, gLabel);
    this.editRoot.append(this.labelled("Guidance w", gRow));

    const seed = el("input") as HTMLInputElement;
    seed.type = "number";
    seed.value = "0";
    this.editRoot.append(this.labelled("Seed", seed));

    let modeControls: () => Promise<JobResult>;
    const common = (): EditParams => ({
      prompt: prompt.value || undefined,
      guidanceW: Number(guidance.value),
      seed: Number(seed.value) || 0,
    });

    if (this.editMode === "transform") {
      const t0 = el("input") as HTMLInputElement;
      t0.type = "range";
      t0.min = "0";
      t0.max = String(this.bounds.diffusionT);
      t0.value = String(Math.floor(this.bounds.diffusionT / 2));
      const tLabel = el("span", "slider-value", t0.value);
      t0.addEventListener("input", () => (tLabel.textContent = t0.value));
      const tRow = el("div", "slider-row");
      tRow.append(t0, tLabel);
      this.editRoot.append(this.labelled("Start step T0", tRow));
      modeControls = () => this.client.transform(wavBlob(item.audio), Number(t0.value), common());
    } else if (this.editMode === "inpaint") {
      this.editRoot.append(this.buildMaskEditor(item));
      modeControls = async () => {
        if (!this.mask) throw new Error("no mask");
        const png = await maskToPngBlob(this.mask);
        return this.client.inpaint(wavBlob(item.audio), png, common());
      };
    } else {
      const frames = el("input") as HTMLInputElement;
      frames.type = "number";
      frames.min = "1";
      frames.value = String(item.spectrogram.width);
      this.editRoot.append(this.labelled("Target frames", frames));
      modeControls = () => this.client.extend(wavBlob(item.audio), Number(frames.value), common());
    }

    const submit = el("button", "primary", "Apply edit");
    submit.disabled = this.editBusy;
    submit.addEventListener("click", () => void this.submitEdit(item, submit, modeControls));
    this.editRoot.append(submit);
  }

  private async submitEdit(
    parent: SessionItem,
    button: HTMLButtonElement,
    run: () => Promise<JobResult>,
  ): Promise<void> {
    if (this.editBusy) return;
    this.editBusy = true;
    button.disabled = true;
    this.clearError();
    try {
      const result = await run();
      const audio = await this.client.audioBytes(result);
      this.history.add(result, audio, parent.id);
      this.renderHistory();
    } catch (err) {
      this.showError(err, `${this.editMode} failed`);
    } finally {
      this.editBusy = false;
      button.disabled = false;
    }
  }

  // -- mask editor ------------------------------------------------------

  private buildMaskEditor(item: SessionItem): HTMLElement {
    const wrap = el("div", "mask-editor");
    if (!this.mask) this.mask = new MaskCanvasState(item.spectrogram.height, item.spectrogram.width);
    const mask = this.mask;

    const canvas = el("canvas") as HTMLCanvasElement;
    canvas.width = mask.width;
    canvas.height = mask.height;
    canvas.className = "mask-canvas";
    canvas.style.backgroundImage = `url(${spectrogramUrl(item)})`;

    const redraw = () => {
      const ctx = canvas.getContext("2d");
      if (!ctx) return;
      ctx.clearRect(0, 0, canvas.width, canvas.height);
      const raster = mask.toArray();
      ctx.fillStyle = "rgba(255, 64, 64, 0.45)"; // regenerate = red overlay
      for (let r = 0; r < mask.height; r++) {
        for (let c = 0; c < mask.width; c++) {
          if (raster[r * mask.width + c] === 0) ctx.fillRect(c, r, 1, 1);
        }
      }
    };

    const toCell = (ev: MouseEvent): [number, number] => {
      const rect = canvas.getBoundingClientRect();
      const col = Math.floor(((ev.clientX - rect.left) / rect.width) * mask.width);
      const row = Math.floor(((ev.clientY - rect.top) / rect.height) * mask.height);
      return [row, col];
    };

    let stroking = false;
    canvas.addEventListener("mousedown", (ev) => {
      stroking = true;
      mask.beginStroke();
      const [r, c] = toCell(ev);
      mask.paint(r, c, this.maskValue);
      redraw();
    });
    canvas.addEventListener("mousemove", (ev) => {
      if (!stroking) return;
      const [r, c] = toCell(ev);
      mask.paint(r, c, this.maskValue);
      redraw();
    });
    window.addEventListener("mouseup", () => (stroking = false));
    wrap.append(canvas);

    const tools = el("div", "mask-tools");
    const brush = el("input") as HTMLInputElement;
    brush.type = "range";
    brush.min = "1";
    brush.max = "32";
    brush.value = String(mask.brushSize);
    brush.addEventListener("input", () => (mask.brushSize = Number(brush.value)));
    tools.append(this.labelled("Brush", brush));

    const modeToggle = el("button", "small", this.maskValue === 0 ? "painting: regenerate" : "painting: keep");
    modeToggle.addEventListener("click", () => {
      this.maskValue = this.maskValue === 0 ? 1 : 0;
      modeToggle.textContent = this.maskValue === 0 ? "painting: regenerate" : "painting: keep";
    });
    const undo = this.actionButton("Undo", () => {
      mask.undo();
      redraw();
    });
    const keepAll = this.actionButton("Keep all", () => {
      mask.beginStroke();
      mask.fill(1);
      redraw();
    });
    const regenAll = this.actionButton("Regenerate all", () => {
      mask.beginStroke();
      mask.fill(0);
      redraw();
    });
    const exportBtn = this.actionButton("Export mask", () => {
      const payload = mask.exportRle();
      download("mask.rle.json", new Blob([JSON.stringify(payload, null, 2) + "\n"], { type: "application/json" }));
    });
    const importInput = el("input") as HTMLInputElement;
    importInput.type = "file";
    importInput.accept = "application/json";
    importInput.addEventListener("change", () => {
      const file = importInput.files?.[0];
      if (!file) return;
      void file.text().then((text) => {
        const payload = JSON.parse(text) as RlePayload;
        this.mask = MaskCanvasState.importRle(payload, mask.brushSize);
        this.renderEditPanel();
      });
    });
    tools.append(modeToggle, undo, keepAll, regenAll, exportBtn, importInput);
    wrap.append(tools);
    redraw();
    return wrap;
  }
}

export function startApp(root: HTMLElement, client?: ServiceClient): App {
  const app = new App(root, client);
  void app.start();
  return app;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  startApp(document.getElementById("app") as HTMLElement);
}
