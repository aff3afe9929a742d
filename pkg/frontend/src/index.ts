export { ApiError, GatewayClient } from "./api.js";
export { App, mountApp } from "./app.js";
export { ChatView } from "./chatView.js";
export { InstructorDashboard } from "./dashboard.js";
export { HistorySidebar } from "./historySidebar.js";
export { KeyPanel } from "./keyPanel.js";
export { escapeHtml, renderMarkdown } from "./markdown.js";
export { SessionState } from "./session.js";
export { sseData } from "./sse.js";
export type * from "./types.js";
