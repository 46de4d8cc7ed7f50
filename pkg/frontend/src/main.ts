import { HttpLabelingApi } from "./api.js";
import { labelForKey } from "./keyboard.js";
import { AppModel } from "./model.js";
import { renderApp } from "./render.js";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}

const model = new AppModel(new HttpLabelingApi());
const submit = (label: number) => void model.chooseLabel(label);

model.onChange(() => renderApp(model, root, submit));

document.addEventListener("keydown", (event) => {
  if (event.ctrlKey || event.metaKey || event.altKey) {
    return;
  }
  const label = labelForKey(event.key, model.numClasses());
  if (label !== null && model.canLabel(label)) {
    event.preventDefault();
    submit(label);
  }
});

void model.refresh().catch((error) => {
  model.toasts.push({ kind: "error", message: `initial load failed: ${error}` });
  renderApp(model, root, submit);
});

// keep the advancing state fresh even without user input
setInterval(() => {
  if (model.status() === "advancing") {
    void model.refresh();
  }
}, 1500);
