import { ApiClient } from "./api.js";
import { loadPage, submitVerdict } from "./controller.js";
import {
  State,
  initialState,
  moveSelection,
  selectedSample,
  setOverlay,
  totalPages,
} from "./store.js";
import type { Filter, SampleCard, Verdict } from "./types.js";

const api = new ApiClient("");
let state: State = initialState();

const get = () => state;
const set = (next: State) => {
  state = next;
  render();
};

const app = document.getElementById("app") as HTMLElement;

function h<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const el = document.createElement(tag);
  if (className) {
    el.className = className;
  }
  if (text) {
    el.textContent = text;
  }
  return el;
}

function renderHeader(): HTMLElement {
  const header = h("header", "toolbar");
  const p = state.counts;
  header.appendChild(
    h(
      "div",
      "progress",
      `reviewed ${p.reviewed} / ${p.total}  ·  accepted ${p.accepted}  ·  rejected ${p.rejected}  ·  remaining ${p.remaining}`,
    ),
  );
  const filters = h("div", "filters");
  (["all", "accepted", "rejected", "unreviewed"] as Filter[]).forEach((f) => {
    const btn = h("button", state.filter === f ? "active" : "", f);
    btn.addEventListener("click", () => void loadPage(get, set, api, 1, f));
    filters.appendChild(btn);
  });
  header.appendChild(filters);

  const overlayBtn = h("button", state.overlay ? "active" : "", "mask overlay (O)");
  overlayBtn.addEventListener("click", () => set(setOverlay(state, !state.overlay)));
  header.appendChild(overlayBtn);

  const pager = h("div", "pager");
  const prev = h("button", "", "prev");
  prev.disabled = state.page <= 1;
  prev.addEventListener("click", () => void loadPage(get, set, api, state.page - 1, state.filter));
  const next = h("button", "", "next");
  next.disabled = state.page >= totalPages(state);
  next.addEventListener("click", () => void loadPage(get, set, api, state.page + 1, state.filter));
  pager.appendChild(prev);
  pager.appendChild(h("span", "", ` ${state.page} / ${totalPages(state)} `));
  pager.appendChild(next);
  header.appendChild(pager);
  return header;
}

function verdictControls(sample: SampleCard): HTMLElement {
  const controls = h("div", "controls");
  const reasonSelect = h("select") as HTMLSelectElement;
  state.reasonTags.forEach((tag) => {
    const opt = h("option", "", tag) as HTMLOptionElement;
    opt.value = tag;
    reasonSelect.appendChild(opt);
  });
  reasonSelect.value = sample.reason_tag || state.reasonTags[state.reasonTags.length - 1];

  const act = (verdict: Verdict) => {
    const reason = verdict === "rejected" ? reasonSelect.value : "";
    void submitVerdict(get, set, api, sample.sample_id, verdict, reason);
  };
  const accept = h("button", "accept", "accept (A)");
  accept.addEventListener("click", () => act("accepted"));
  const reject = h("button", "reject", "reject (R)");
  reject.addEventListener("click", () => act("rejected"));
  controls.appendChild(accept);
  controls.appendChild(reject);
  controls.appendChild(reasonSelect);
  return controls;
}

function renderCard(sample: SampleCard, index: number): HTMLElement {
  const card = h("figure", "card" + (index === state.selected ? " selected" : ""));
  card.dataset.sampleId = sample.sample_id;
  if (sample.verdict) {
    card.classList.add(sample.verdict);
  }
  card.addEventListener("click", () => set({ ...state, selected: index }));

  const frame = h("div", "frame");
  const img = h("img", "photo") as HTMLImageElement;
  img.src = sample.image_url;
  img.loading = "lazy";
  frame.appendChild(img);
  const mask = h("img", "mask" + (state.overlay ? "" : " hidden")) as HTMLImageElement;
  mask.src = sample.mask_url;
  mask.loading = "lazy";
  frame.appendChild(mask);
  card.appendChild(frame);

  const caption = h("figcaption");
  const badge = sample.verdict ? ` — ${sample.verdict}` : "";
  caption.appendChild(h("div", "title", `${sample.sample_id} · ${sample.object_name}${badge}`));
  if (sample.verdict === "rejected" && sample.reason_tag) {
    caption.appendChild(h("div", "reason", sample.reason_tag));
  }
  caption.appendChild(verdictControls(sample));
  card.appendChild(caption);
  return card;
}

function render(): void {
  app.replaceChildren();
  if (state.offline) {
    const banner = h("div", "offline", "curate server unreachable — verdicts are not being saved");
    const retry = h("button", "", "retry");
    retry.addEventListener("click", () => void loadPage(get, set, api, state.page, state.filter));
    banner.appendChild(retry);
    app.appendChild(banner);
  }
  app.appendChild(renderHeader());
  const grid = h("main", "grid");
  state.samples.forEach((sample, i) => grid.appendChild(renderCard(sample, i)));
  if (!state.samples.length) {
    grid.appendChild(h("div", "empty", "no samples match this filter"));
  }
  app.appendChild(grid);
}

document.addEventListener("keydown", (ev) => {
  if (ev.target instanceof HTMLSelectElement) {
    return;
  }
  const key = ev.key.toLowerCase();
  const sample = selectedSample(state);
  if (key === "a" && sample) {
    void submitVerdict(get, set, api, sample.sample_id, "accepted", "");
  } else if (key === "r" && sample) {
    void submitVerdict(get, set, api, sample.sample_id, "rejected", "other");
  } else if (key === "o") {
    set(setOverlay(state, !state.overlay));
  } else if (key === "arrowright") {
    set(moveSelection(state, 1));
  } else if (key === "arrowleft") {
    set(moveSelection(state, -1));
  }
});

void loadPage(get, set, api, 1, "all");
