/** Browser entry point: mount the annotation screen for the session in the URL. */

import { AnnotationApi } from "./api.js";
import { AnnotationApp } from "./app.js";

function boot(): void {
  const root = document.getElementById("app");
  if (root === null) {
    return;
  }
  const params = new URLSearchParams(window.location.search);
  const sessionId = params.get("session");
  if (sessionId === null || sessionId === "") {
    root.textContent = "Open this page with ?session=<session-id> to start annotating.";
    return;
  }
  const api = new AnnotationApi(params.get("api") ?? "");
  const app = new AnnotationApp(api, sessionId, root);
  window.addEventListener("keydown", (event) => {
    const target = event.target;
    if (target instanceof HTMLInputElement || target instanceof HTMLTextAreaElement) {
      return;
    }
    app.handleKey(event.key);
  });
  void app.start();
}

boot();
