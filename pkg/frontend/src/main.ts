import { StudyApi } from "./api.js";
import { DomView, preloadImage } from "./dom.js";
import { SessionFlow } from "./flow.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const view = new DomView(root);
const flow = new SessionFlow({
  api: new StudyApi(""),
  view,
  storage: window.localStorage,
  preload: preloadImage,
});

view.bindStart((volunteer) => void flow.begin(volunteer));
view.bindVerdict((verdict) => void flow.submit(verdict));

void flow.resume().then((resumed) => {
  if (!resumed) view.showStart();
});
