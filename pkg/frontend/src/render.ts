import { AppModel } from "./model.js";
import { ProjectionPoint, QueueItem } from "./types.js";

const CLASS_COLORS = [
  "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
  "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

export function classColor(label: number): string {
  return CLASS_COLORS[label % CLASS_COLORS.length];
}

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function renderProgress(model: AppModel): HTMLElement {
  const panel = el("section", "panel progress-panel");
  const state = model.state;
  if (!state) {
    return panel;
  }
  panel.appendChild(el("h2", undefined, "budget"));
  const bar = el("div", "budget-bar");
  const fill = el("div", "budget-fill");
  fill.style.width = `${(100 * model.progressFraction()).toFixed(1)}%`;
  bar.appendChild(fill);
  panel.appendChild(bar);
  panel.appendChild(
    el("p", "budget-text",
       `${state.spent} / ${state.cap} labels — step ${state.kappa} of ${state.kappa_max}`),
  );
  panel.appendChild(sparkline("cluster purity", model.series("bcubed_precision")));
  panel.appendChild(sparkline("eval top-1", model.series("eval_top1")));
  return panel;
}

function sparkline(title: string, values: Array<number | null>): HTMLElement {
  const wrap = el("div", "sparkline");
  wrap.appendChild(el("span", "sparkline-title", title));
  const svgNs = "http://www.w3.org/2000/svg";
  const svg = document.createElementNS(svgNs, "svg");
  svg.setAttribute("viewBox", "0 0 120 32");
  svg.classList.add("sparkline-svg");
  const known = values.filter((v): v is number => v !== null);
  if (known.length) {
    const points = values
      .map((v, i) => {
        if (v === null) {
          return null;
        }
        const x = values.length === 1 ? 60 : (i / (values.length - 1)) * 112 + 4;
        const y = 28 - v * 24;
        return `${x.toFixed(1)},${y.toFixed(1)}`;
      })
      .filter((p): p is string => p !== null);
    const poly = document.createElementNS(svgNs, "polyline");
    poly.setAttribute("points", points.join(" "));
    svg.appendChild(poly);
  }
  const latest = known.length ? known[known.length - 1].toFixed(3) : "–";
  wrap.appendChild(svg);
  wrap.appendChild(el("span", "sparkline-value", latest));
  return wrap;
}

function renderScatter(
  points: ProjectionPoint[], currentId: string | null,
): SVGSVGElement {
  const svgNs = "http://www.w3.org/2000/svg";
  const svg = document.createElementNS(svgNs, "svg");
  svg.setAttribute("viewBox", "0 0 240 240");
  svg.classList.add("scatter");
  if (!points.length) {
    return svg;
  }
  const xs = points.map((p) => p.x);
  const ys = points.map((p) => p.y);
  const minX = Math.min(...xs), maxX = Math.max(...xs);
  const minY = Math.min(...ys), maxY = Math.max(...ys);
  const spanX = maxX - minX || 1;
  const spanY = maxY - minY || 1;
  const sx = (x: number) => 12 + (216 * (x - minX)) / spanX;
  const sy = (y: number) => 228 - (216 * (y - minY)) / spanY;

  for (const point of points) {
    const circle = document.createElementNS(svgNs, "circle");
    circle.setAttribute("cx", sx(point.x).toFixed(1));
    circle.setAttribute("cy", sy(point.y).toFixed(1));
    const current = point.id === currentId;
    circle.setAttribute("r", current ? "6" : point.labeled ? "4" : "2.5");
    circle.setAttribute(
      "fill",
      point.label !== null ? classColor(point.label) : "#aab",
    );
    if (current) {
      circle.classList.add("current-point");
    } else if (point.pending) {
      circle.classList.add("pending-point");
    }
    svg.appendChild(circle);
  }
  return svg;
}

function renderQueue(
  model: AppModel, onLabel: (label: number) => void,
): HTMLElement {
  const panel = el("section", "panel queue-panel");
  const status = model.status();
  panel.appendChild(el("h2", undefined, "annotation queue"));

  if (status === "complete") {
    panel.appendChild(el("p", "status-line", "run complete — budget spent"));
    const link = el("a", "report-link", "view final metrics") as HTMLAnchorElement;
    link.href = "/api/metrics";
    panel.appendChild(link);
    return panel;
  }
  if (status === "advancing" || status === "loading") {
    panel.appendChild(
      el("p", "status-line",
         status === "advancing" ? "step complete / advancing…" : "loading…"),
    );
    return panel;
  }

  const item = model.current() as QueueItem;
  const card = el("div", "sample-card");
  card.appendChild(el("h3", "sample-id", item.sample_id));
  if (item.asset_uri) {
    const img = el("img", "sample-asset") as HTMLImageElement;
    img.src = item.asset_uri;
    img.alt = item.sample_id;
    card.appendChild(img);
  } else {
    card.appendChild(el("p", "hint", "feature-space neighborhood"));
    card.appendChild(renderScatter(model.neighborhood(), item.sample_id));
  }
  panel.appendChild(card);

  const buttons = el("div", "label-buttons");
  for (let label = 0; label < model.numClasses(); label++) {
    const button = el("button", "label-button", `${label}`) as HTMLButtonElement;
    button.style.borderColor = classColor(label);
    if (item.suggested_label === label) {
      button.classList.add("suggested");
      button.title = "classifier suggestion";
    }
    button.disabled = !model.canLabel(label);
    button.addEventListener("click", () => onLabel(label));
    buttons.appendChild(button);
  }
  panel.appendChild(buttons);
  panel.appendChild(
    el("p", "hint", "press a digit key to assign that class"),
  );

  if (model.queue.length > 1) {
    const upcoming = el("div", "upcoming");
    upcoming.appendChild(el("span", "hint", "next: "));
    for (const next of model.queue.slice(1, 6)) {
      upcoming.appendChild(el("code", "upcoming-id", next.sample_id));
    }
    panel.appendChild(upcoming);
  }
  return panel;
}

function renderToasts(model: AppModel): HTMLElement {
  const box = el("div", "toasts");
  model.toasts.forEach((toast, index) => {
    const node = el("div", `toast toast-${toast.kind}`, toast.message);
    node.addEventListener("click", () => model.dismissToast(index));
    box.appendChild(node);
  });
  return box;
}

export function renderApp(
  model: AppModel, root: HTMLElement, onLabel: (label: number) => void,
): void {
  root.replaceChildren();
  const header = el("header");
  header.appendChild(el("h1", undefined, "eigenshot labeling"));
  header.appendChild(el("span", "status-badge", model.status()));
  root.appendChild(header);
  root.appendChild(renderProgress(model));
  root.appendChild(renderQueue(model, onLabel));
  root.appendChild(renderToasts(model));
}
